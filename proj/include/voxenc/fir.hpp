#pragma once

#include <Eigen/Core>

#include <string>
#include <utility>
#include <vector>

#include "voxenc/errors.hpp"
#include "voxenc/features.hpp"

namespace voxenc {

/// Number of lagged copies appended after the current vector.
struct FirSpec {
    Eigen::Index k = 4;
};

using RunBoundaries = std::vector<std::pair<Eigen::Index, Eigen::Index>>; // [start, end)

inline void validate_boundaries(const RunBoundaries& bounds, Eigen::Index n_trs) {
    if (bounds.empty()) throw validation_error("fir: no run boundaries");
    Eigen::Index expect = 0;
    for (const auto& [s, e] : bounds) {
        if (s != expect || e <= s)
            throw validation_error("fir: boundaries must partition [0, n_trs) in order");
        expect = e;
    }
    if (expect != n_trs)
        throw validation_error("fir: boundaries cover " + std::to_string(expect) +
                               " of " + std::to_string(n_trs) + " TRs");
}

/// Row t of the output is [h_t, h_{t-1}, ..., h_{t-k}]. Lags never cross
/// a run boundary; positions before a run's start contribute zeros.
inline FeatureMatrix fir_expand(const FeatureMatrix& x, const FirSpec& spec,
                                const RunBoundaries& bounds) {
    if (x.level != FeatureLevel::tr)
        throw usage_error("fir_expand: features must be TR-level");
    if (spec.k < 0) throw validation_error("fir_expand: k must be >= 0");
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.dim();
    validate_boundaries(bounds, n);

    FeatureMatrix out;
    out.level = FeatureLevel::tr;
    out.provenance = x.provenance;
    out.provenance.params["fir_k"] = std::to_string(spec.k);
    out.values = Eigen::MatrixXd::Zero(n, d * (spec.k + 1));
    for (const auto& [s, e] : bounds) {
        const Eigen::Index len = e - s;
        for (Eigen::Index j = 0; j <= spec.k; ++j) {
            const Eigen::Index rows = len - j;
            if (rows <= 0) break;
            out.values.block(s + j, j * d, rows, d) = x.values.block(s, 0, rows, d);
        }
    }
    return out;
}

} // namespace voxenc
