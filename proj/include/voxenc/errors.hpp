#pragma once

#include <stdexcept>
#include <string>

namespace voxenc {

/// Base class for all library errors.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad configuration or misuse of an interface. CLI exit code 2.
class config_error : public error {
public:
    using error::error;
};

/// Caller fed a value into an interface that cannot accept it
/// (e.g. TR-level features into an event-level consumer).
class usage_error : public config_error {
public:
    using config_error::config_error;
};

/// Problems with input data. CLI exit code 3.
class data_error : public error {
public:
    using error::error;
};

/// File not in the expected on-disk format.
class format_error : public data_error {
public:
    using data_error::data_error;
};

/// Declared and actual contents disagree (sizes, counts).
class integrity_error : public data_error {
public:
    using data_error::data_error;
};

/// A value violates a documented invariant.
class validation_error : public data_error {
public:
    using data_error::data_error;
};

/// A named entity (mask, run, key) does not exist.
class lookup_error : public data_error {
public:
    using data_error::data_error;
};

/// Row counts of paired inputs disagree.
class alignment_error : public data_error {
public:
    using data_error::data_error;
};

/// Numeric computation failed (non-convergence, overflow). CLI exit code 4.
class numeric_error : public error {
public:
    using error::error;
};

/// A stage of the batch pipeline failed; carries the stage name and the
/// exit code of the underlying cause.
class pipeline_error : public error {
public:
    pipeline_error(const std::string& stage, const std::string& what, int code)
        : error("stage '" + stage + "': " + what), stage_(stage), code_(code) {}

    const std::string& stage() const { return stage_; }
    int code() const { return code_; }

private:
    std::string stage_;
    int code_;
};

inline int exit_code_for(const std::exception& e) {
    if (auto* p = dynamic_cast<const pipeline_error*>(&e)) return p->code();
    if (dynamic_cast<const config_error*>(&e)) return 2;
    if (dynamic_cast<const data_error*>(&e)) return 3;
    if (dynamic_cast<const numeric_error*>(&e)) return 4;
    return 1;
}

} // namespace voxenc
