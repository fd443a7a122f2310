#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "voxenc/errors.hpp"
#include "voxenc/rng.hpp"

namespace voxenc {

enum class FoldScheme { shuffled, contiguous, contiguous_trimmed };

inline std::string to_string(FoldScheme s) {
    switch (s) {
        case FoldScheme::shuffled: return "shuffled";
        case FoldScheme::contiguous: return "contiguous";
        default: return "contiguous_trimmed";
    }
}

inline FoldScheme fold_scheme_from_string(const std::string& s) {
    if (s == "shuffled") return FoldScheme::shuffled;
    if (s == "contiguous") return FoldScheme::contiguous;
    if (s == "contiguous_trimmed") return FoldScheme::contiguous_trimmed;
    throw config_error("unknown folding_type: " + s);
}

struct Fold {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> test;
};

/// Explicit train/test index sets per fold. Test sets always partition
/// [0, n); trimming removes train indices near test-block edges only.
struct FoldPlan {
    FoldScheme scheme = FoldScheme::contiguous;
    int k_folds = 5;
    int trim_trs = 0;
    std::uint64_t seed = 0;
    Eigen::Index n = 0;
    std::vector<Fold> folds;
};

/// Contiguous block edges: k blocks with sizes differing by at most one,
/// earlier blocks larger.
inline std::vector<std::pair<Eigen::Index, Eigen::Index>> block_edges(Eigen::Index n, int k) {
    std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
    const Eigen::Index base = n / k;
    const Eigen::Index rem = n % k;
    Eigen::Index pos = 0;
    for (int b = 0; b < k; ++b) {
        const Eigen::Index len = base + (b < rem ? 1 : 0);
        edges.emplace_back(pos, pos + len);
        pos += len;
    }
    return edges;
}

inline FoldPlan make_folds(Eigen::Index n_trs, FoldScheme scheme, int k_folds,
                           int trim_trs = 0, std::uint64_t seed = 0) {
    if (k_folds < 2) throw validation_error("make_folds: k_folds must be >= 2");
    if (n_trs < k_folds) throw validation_error("make_folds: k_folds exceeds n_trs");
    if (trim_trs < 0) throw validation_error("make_folds: trim_trs must be >= 0");

    FoldPlan plan;
    plan.scheme = scheme;
    plan.k_folds = k_folds;
    plan.trim_trs = trim_trs;
    plan.seed = seed;
    plan.n = n_trs;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_trs));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    if (scheme == FoldScheme::shuffled) {
        Rng rng(seed);
        rng.shuffle(order);
    }

    const auto edges = block_edges(n_trs, k_folds);
    for (const auto& [s, e] : edges) {
        Fold fold;
        for (Eigen::Index i = s; i < e; ++i)
            fold.test.push_back(order[static_cast<std::size_t>(i)]);
        std::sort(fold.test.begin(), fold.test.end());

        if (scheme == FoldScheme::contiguous_trimmed) {
            // drop train indices within trim_trs of this fold's test block
            const Eigen::Index lo = s - trim_trs;
            const Eigen::Index hi = e + trim_trs; // exclusive
            for (Eigen::Index i = 0; i < n_trs; ++i)
                if (i < lo || i >= hi) fold.train.push_back(i);
        } else {
            std::vector<char> in_test(static_cast<std::size_t>(n_trs), 0);
            for (Eigen::Index i : fold.test) in_test[static_cast<std::size_t>(i)] = 1;
            for (Eigen::Index i = 0; i < n_trs; ++i)
                if (!in_test[static_cast<std::size_t>(i)]) fold.train.push_back(i);
        }
        plan.folds.push_back(std::move(fold));
    }
    return plan;
}

} // namespace voxenc
