#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "voxenc/errors.hpp"
#include "voxenc/features.hpp"

namespace voxenc {

enum class DownsampleMethod { sum, average, last, lanczos };

inline std::string to_string(DownsampleMethod m) {
    switch (m) {
        case DownsampleMethod::sum: return "sum";
        case DownsampleMethod::average: return "average";
        case DownsampleMethod::last: return "last";
        default: return "lanczos";
    }
}

inline DownsampleMethod downsample_method_from_string(const std::string& s) {
    if (s == "sum") return DownsampleMethod::sum;
    if (s == "average") return DownsampleMethod::average;
    if (s == "last") return DownsampleMethod::last;
    if (s == "lanczos") return DownsampleMethod::lanczos;
    throw config_error("unknown downsample method: " + s);
}

struct DownsampleSpec {
    DownsampleMethod method = DownsampleMethod::sum;
    int lanczos_a = 3;                     // window lobes
    std::optional<double> cutoff_hz;       // default 1/(2*tr), the TR Nyquist
    bool normalize = true;                 // divide lanczos rows by the weight sum
};

namespace detail {

inline double sinc(double u) {
    if (u == 0.0) return 1.0;
    const double pu = 3.14159265358979323846 * u;
    return std::sin(pu) / pu;
}

/// Windowed sinc: sinc(u) * sinc(u/a) for |u| < a, else 0.
inline double lanczos_kernel(double u, int a) {
    const double aa = static_cast<double>(a);
    if (!(std::abs(u) < aa)) return 0.0;
    return sinc(u) * sinc(u / aa);
}

/// Half-open bin: event at onset o belongs to TR i iff
/// tr_times[i] <= o < tr_times[i] + tr. Returns -1 if o is in no bin.
inline Eigen::Index tr_bin_of(double onset, const Eigen::VectorXd& tr_times, double tr) {
    const Eigen::Index n = tr_times.size();
    Eigen::Index i = static_cast<Eigen::Index>(std::floor((onset - tr_times[0]) / tr));
    i = std::clamp<Eigen::Index>(i, 0, n - 1);
    // guard rounding at bin edges
    while (i > 0 && onset < tr_times[i]) --i;
    while (i + 1 < n && onset >= tr_times[i] + tr) ++i;
    if (onset >= tr_times[i] && onset < tr_times[i] + tr) return i;
    return -1;
}

} // namespace detail

/// Aggregates event-level features into one row per TR.
inline FeatureMatrix downsample(const FeatureMatrix& features,
                                const std::vector<StimulusEvent>& events,
                                const Eigen::VectorXd& tr_times, double tr,
                                const DownsampleSpec& spec) {
    if (features.level != FeatureLevel::event)
        throw usage_error("downsample: features must be event-level");
    if (features.rows() != static_cast<Eigen::Index>(events.size()))
        throw alignment_error("downsample: " + std::to_string(features.rows()) +
                              " feature rows vs " + std::to_string(events.size()) + " events");
    if (tr_times.size() == 0) throw validation_error("downsample: tr_times empty");
    if (spec.lanczos_a < 1) throw validation_error("downsample: lanczos_a must be >= 1");

    const Eigen::Index n_trs = tr_times.size();
    const Eigen::Index d = features.dim();
    FeatureMatrix out;
    out.level = FeatureLevel::tr;
    out.provenance = features.provenance;
    out.provenance.params["downsample"] = to_string(spec.method);
    out.values = Eigen::MatrixXd::Zero(n_trs, d);

    if (spec.method == DownsampleMethod::lanczos) {
        const double cutoff = spec.cutoff_hz.value_or(1.0 / (2.0 * tr));
        if (!(cutoff > 0)) throw validation_error("downsample: cutoff must be > 0");
        // f_c doubles the cutoff so the kernel's first zero sits one TR away
        // when the cutoff is the TR Nyquist.
        const double fc = 2.0 * cutoff;
        const double reach = static_cast<double>(spec.lanczos_a) / fc;
        // events are sorted by onset; only those within the kernel support matter
        std::vector<double> onsets(events.size());
        for (std::size_t i = 0; i < events.size(); ++i) onsets[i] = events[i].onset;
        for (Eigen::Index t = 0; t < n_trs; ++t) {
            const double center = tr_times[t];
            const auto lo = std::lower_bound(onsets.begin(), onsets.end(), center - reach);
            const auto hi = std::upper_bound(onsets.begin(), onsets.end(), center + reach);
            double wsum = 0.0, wabs = 0.0;
            Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
            for (auto it = lo; it != hi; ++it) {
                const auto i = static_cast<Eigen::Index>(it - onsets.begin());
                const double w = detail::lanczos_kernel(fc * (center - *it), spec.lanczos_a);
                if (w == 0.0) continue;
                wsum += w;
                wabs += std::abs(w);
                acc += w * features.values.row(i);
            }
            if (wabs == 0.0) continue; // no event in reach: zero row
            if (spec.normalize) {
                if (wsum == 0.0) continue; // exact cancellation: zero row
                out.values.row(t) = acc / wsum;
            } else {
                out.values.row(t) = acc;
            }
        }
        return out;
    }

    std::vector<std::vector<Eigen::Index>> bins(static_cast<std::size_t>(n_trs));
    for (std::size_t i = 0; i < events.size(); ++i) {
        const Eigen::Index b = detail::tr_bin_of(events[i].onset, tr_times, tr);
        if (b >= 0) bins[static_cast<std::size_t>(b)].push_back(static_cast<Eigen::Index>(i));
    }
    for (Eigen::Index t = 0; t < n_trs; ++t) {
        const auto& bin = bins[static_cast<std::size_t>(t)];
        if (bin.empty()) continue;
        switch (spec.method) {
            case DownsampleMethod::sum:
            case DownsampleMethod::average: {
                Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
                for (Eigen::Index i : bin) acc += features.values.row(i);
                if (spec.method == DownsampleMethod::average)
                    acc /= static_cast<double>(bin.size());
                out.values.row(t) = acc;
                break;
            }
            case DownsampleMethod::last:
                // events are sorted by onset with ties in input order, so the
                // final index is the latest-onset event of the bin
                out.values.row(t) = features.values.row(bin.back());
                break;
            default: break;
        }
    }
    return out;
}

} // namespace voxenc
