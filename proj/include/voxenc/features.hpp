#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "voxenc/assembly.hpp"
#include "voxenc/errors.hpp"

namespace voxenc {

enum class FeatureLevel { event, tr };

inline std::string to_string(FeatureLevel l) {
    return l == FeatureLevel::event ? "event" : "tr";
}

struct FeatureProvenance {
    std::string extractor;
    std::optional<int> layer;
    std::optional<std::string> context_policy;
    std::map<std::string, std::string> params;
};

/// Real-valued feature matrix at event or TR resolution.
struct FeatureMatrix {
    Eigen::MatrixXd values; // rows x d
    FeatureLevel level = FeatureLevel::event;
    FeatureProvenance provenance;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index dim() const { return values.cols(); }
};

inline void require_finite(const Eigen::MatrixXd& m, const std::string& what) {
    if (!m.allFinite()) throw validation_error(what + ": non-finite values");
}

// -------------------------------------------------------------------------
// Word rate: one count per event; sum pooling per TR then yields the
// words-per-TR regressor.

inline FeatureMatrix word_rate(const std::vector<StimulusEvent>& events) {
    FeatureMatrix f;
    f.values = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(events.size()), 1);
    f.level = FeatureLevel::event;
    f.provenance.extractor = "word_rate";
    return f;
}

// -------------------------------------------------------------------------
// Static embedding lookup.

enum class OovPolicy { zeros, mean };

struct EmbeddingTable {
    Eigen::Index dim = 0;
    std::map<std::string, Eigen::VectorXd> vectors;

    /// Text format: one token per line, "token v1 v2 ... vd".
    static EmbeddingTable load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw format_error("missing embedding table: " + path.string());
        EmbeddingTable t;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            std::istringstream ss(line);
            std::string token;
            ss >> token;
            std::vector<double> vals;
            double v;
            while (ss >> v) vals.push_back(v);
            if (token.empty() || vals.empty() || !ss.eof())
                throw format_error(path.string() + ":" + std::to_string(lineno) +
                                   ": malformed embedding line");
            if (t.dim == 0) t.dim = static_cast<Eigen::Index>(vals.size());
            if (static_cast<Eigen::Index>(vals.size()) != t.dim)
                throw format_error(path.string() + ":" + std::to_string(lineno) +
                                   ": vector length differs from first line");
            Eigen::VectorXd vec(t.dim);
            for (Eigen::Index i = 0; i < t.dim; ++i) vec[i] = vals[static_cast<std::size_t>(i)];
            t.vectors[token] = std::move(vec);
        }
        if (t.vectors.empty()) throw format_error(path.string() + ": empty embedding table");
        return t;
    }

    Eigen::VectorXd mean() const {
        Eigen::VectorXd m = Eigen::VectorXd::Zero(dim);
        for (const auto& [tok, v] : vectors) m += v;
        return m / static_cast<double>(vectors.size());
    }
};

/// Strips leading/trailing ASCII punctuation and lowercases.
inline std::string normalize_token(const std::string& raw) {
    auto is_punct = [](unsigned char c) { return std::ispunct(c) != 0; };
    std::size_t b = 0, e = raw.size();
    while (b < e && is_punct(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && is_punct(static_cast<unsigned char>(raw[e - 1]))) --e;
    std::string out = raw.substr(b, e - b);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline FeatureMatrix embedding_lookup(const std::vector<StimulusEvent>& events,
                                      const EmbeddingTable& table,
                                      OovPolicy oov = OovPolicy::zeros,
                                      bool normalize_tokens = true) {
    for (const auto& [tok, v] : table.vectors)
        if (v.size() != table.dim)
            throw validation_error("embedding table: vector length mismatch for " + tok);
    FeatureMatrix f;
    f.level = FeatureLevel::event;
    f.provenance.extractor = "embedding";
    f.provenance.params["oov_policy"] = (oov == OovPolicy::zeros ? "zeros" : "mean");
    f.provenance.params["normalize_tokens"] = normalize_tokens ? "true" : "false";
    f.values.resize(static_cast<Eigen::Index>(events.size()), table.dim);
    Eigen::VectorXd oov_vec = Eigen::VectorXd::Zero(table.dim);
    if (oov == OovPolicy::mean) oov_vec = table.mean();
    for (std::size_t i = 0; i < events.size(); ++i) {
        const std::string key = normalize_tokens ? normalize_token(events[i].text) : events[i].text;
        auto it = table.vectors.find(key);
        f.values.row(static_cast<Eigen::Index>(i)) =
            (it != table.vectors.end() ? it->second : oov_vec).transpose();
    }
    require_finite(f.values, "embedding features");
    return f;
}

// -------------------------------------------------------------------------
// Autocorrelation control vectors: content-free features whose pairwise
// similarity depends only on temporal distance.

struct AcvParams {
    double ell = 300.0;  // correlation length, stimulus-index units
    Eigen::Index d = 16; // feature width
};

/// Exponential-decay kernel A_ij = exp(-|i-j| / ell).
inline Eigen::MatrixXd acv_kernel(Eigen::Index n, double ell) {
    if (n < 1) throw validation_error("acv kernel: n must be >= 1");
    if (!(ell > 0)) throw validation_error("acv kernel: ell must be > 0");
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) {
            const double v = std::exp(-static_cast<double>(i - j) / ell);
            a(i, j) = v;
            a(j, i) = v;
        }
    return a;
}

/// Top-d left singular vectors of the kernel scaled by sqrt singular
/// values. Deterministic sign: the largest-magnitude entry of each vector
/// is made non-negative. Depends only on (n, ell, d), never on content.
inline FeatureMatrix acv_features(Eigen::Index n, const AcvParams& p,
                                  FeatureLevel level = FeatureLevel::event) {
    if (p.d < 1) throw validation_error("acv: d must be >= 1");
    if (p.d > n) throw validation_error("acv: d must be <= n");
    const Eigen::MatrixXd a = acv_kernel(n, p.ell);

    // The kernel is symmetric positive definite, so its eigendecomposition
    // is its SVD with singular values = eigenvalues.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    if (es.info() != Eigen::Success)
        throw numeric_error("acv: eigendecomposition failed");

    FeatureMatrix f;
    f.level = level;
    f.provenance.extractor = "acv";
    f.provenance.params["ell"] = std::to_string(p.ell);
    f.provenance.params["d"] = std::to_string(p.d);
    f.values.resize(n, p.d);
    for (Eigen::Index k = 0; k < p.d; ++k) {
        const Eigen::Index src = n - 1 - k; // eigenvalues ascend in Eigen
        Eigen::VectorXd u = es.eigenvectors().col(src);
        Eigen::Index imax = 0;
        u.array().abs().maxCoeff(&imax);
        if (u[imax] < 0) u = -u;
        const double lambda = std::max(es.eigenvalues()[src], 0.0);
        f.values.col(k) = u * std::sqrt(lambda);
    }
    return f;
}

// -------------------------------------------------------------------------
// Context-window planning for external model extraction.

enum class ContextKind { full, half, reset };

inline std::string to_string(ContextKind k) {
    switch (k) {
        case ContextKind::full: return "full";
        case ContextKind::half: return "half";
        default: return "reset";
    }
}

inline ContextKind context_kind_from_string(const std::string& s) {
    if (s == "full") return ContextKind::full;
    if (s == "half") return ContextKind::half;
    if (s == "reset") return ContextKind::reset;
    throw config_error("unknown context policy: " + s);
}

struct ContextPolicy {
    ContextKind kind = ContextKind::full;
    std::size_t window = 128; // max tokens W >= 1
};

/// Inclusive token range [start, end] fed to the model for each target
/// token; end always equals the target.
struct WindowSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::size_t target = 0;
};

/// full: the window slides one token at a time. half: the window start
/// advances by floor(W/2) whenever the span would exceed W tokens.
/// reset: non-overlapping blocks of W tokens.
inline std::vector<WindowSpan> plan_context_windows(std::size_t n_tokens,
                                                    const ContextPolicy& policy) {
    if (n_tokens < 1) throw validation_error("plan_context_windows: need at least one token");
    if (policy.window < 1) throw validation_error("plan_context_windows: window must be >= 1");
    const std::size_t w = policy.window;
    std::vector<WindowSpan> plan;
    plan.reserve(n_tokens);
    std::size_t start = 0;
    for (std::size_t t = 0; t < n_tokens; ++t) {
        switch (policy.kind) {
            case ContextKind::full:
                start = (t + 1 > w) ? t + 1 - w : 0;
                break;
            case ContextKind::half:
                if (t - start + 1 > w) start += std::max<std::size_t>(1, w / 2);
                break;
            case ContextKind::reset:
                start = (t / w) * w;
                break;
        }
        plan.push_back({start, t, t});
    }
    return plan;
}

// -------------------------------------------------------------------------
// Externally computed activations: one JSON header line followed by a raw
// little-endian float32 row-major block.

inline void export_activations(const std::filesystem::path& path, const FeatureMatrix& f) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error("cannot open for writing: " + path.string());
    nlohmann::json header;
    header["extractor"] = f.provenance.extractor;
    header["layer"] = f.provenance.layer ? nlohmann::json(*f.provenance.layer) : nlohmann::json();
    header["context_policy"] =
        f.provenance.context_policy ? nlohmann::json(*f.provenance.context_policy) : nlohmann::json();
    header["n_rows"] = f.rows();
    header["d"] = f.dim();
    out << header.dump() << "\n";
    std::vector<float> buf(static_cast<std::size_t>(f.values.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = 0; j < f.dim(); ++j)
            buf[k++] = static_cast<float>(f.values(i, j));
    if (!detail::host_is_little) detail::byteswap_f32(buf);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
    if (!out) throw error("write failed: " + path.string());
}

inline FeatureMatrix read_activations(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("missing activation file: " + path.string());
    std::string header_line;
    if (!std::getline(in, header_line))
        throw format_error(path.string() + ": missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(path.string() + ": bad header: " + e.what());
    }
    FeatureMatrix f;
    f.level = FeatureLevel::event;
    Eigen::Index n_rows = 0, d = 0;
    try {
        f.provenance.extractor = header.at("extractor").get<std::string>();
        if (header.contains("layer") && !header["layer"].is_null())
            f.provenance.layer = header["layer"].get<int>();
        if (header.contains("context_policy") && !header["context_policy"].is_null())
            f.provenance.context_policy = header["context_policy"].get<std::string>();
        n_rows = header.at("n_rows").get<Eigen::Index>();
        d = header.at("d").get<Eigen::Index>();
    } catch (const nlohmann::json::exception& e) {
        throw format_error(path.string() + ": bad header: " + e.what());
    }
    if (n_rows < 0 || d < 1) throw format_error(path.string() + ": bad header dimensions");

    const auto data_start = in.tellg();
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::uint64_t>(in.tellg() - data_start);
    const std::uint64_t expected = static_cast<std::uint64_t>(n_rows) * d * 4;
    if (bytes != expected)
        throw integrity_error(path.string() + ": header declares " + std::to_string(n_rows) +
                              "x" + std::to_string(d) + " but block holds " +
                              std::to_string(bytes) + " bytes");
    in.seekg(data_start);
    std::vector<float> buf(static_cast<std::size_t>(n_rows) * d);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(expected));
    if (!in) throw error("read failed: " + path.string());
    if (!detail::host_is_little) detail::byteswap_f32(buf);
    f.values.resize(n_rows, d);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < n_rows; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            f.values(i, j) = buf[k++];
    require_finite(f.values, path.string());
    return f;
}

/// Row count must equal the event count; this is the integrity gate for
/// features computed outside the pipeline.
inline FeatureMatrix ingest_activations(const std::filesystem::path& path,
                                        const std::vector<StimulusEvent>& events) {
    FeatureMatrix f = read_activations(path);
    if (f.rows() != static_cast<Eigen::Index>(events.size()))
        throw alignment_error(path.string() + ": " + std::to_string(f.rows()) +
                              " rows vs " + std::to_string(events.size()) + " events");
    return f;
}

} // namespace voxenc
