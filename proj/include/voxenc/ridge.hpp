#pragma once

#include <Eigen/Core>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "voxenc/errors.hpp"
#include "voxenc/folds.hpp"

namespace voxenc {

/// Pearson correlation; zero-variance inputs give 0 rather than NaN.
inline double pearson_r(const Eigen::Ref<const Eigen::VectorXd>& pred,
                        const Eigen::Ref<const Eigen::VectorXd>& actual) {
    if (pred.size() != actual.size())
        throw validation_error("pearson_r: length mismatch");
    if (pred.size() < 2)
        throw validation_error("pearson_r: need length >= 2");
    const double mp = pred.mean();
    const double ma = actual.mean();
    const Eigen::ArrayXd cp = pred.array() - mp;
    const Eigen::ArrayXd ca = actual.array() - ma;
    const double ssp = (cp * cp).sum();
    const double ssa = (ca * ca).sum();
    if (ssp == 0.0 || ssa == 0.0) return 0.0;
    const double r = (cp * ca).sum() / std::sqrt(ssp * ssa);
    return std::clamp(r, -1.0, 1.0);
}

inline std::vector<double> default_alpha_grid() {
    std::vector<double> alphas;
    for (int i = 0; i < 10; ++i)
        alphas.push_back(std::pow(10.0, 4.0 * i / 9.0));
    return alphas;
}

enum class ScoreMode { fold_mean, pooled };

inline std::string to_string(ScoreMode m) {
    return m == ScoreMode::fold_mean ? "fold_mean" : "pooled";
}

inline ScoreMode score_mode_from_string(const std::string& s) {
    if (s == "fold_mean") return ScoreMode::fold_mean;
    if (s == "pooled") return ScoreMode::pooled;
    throw config_error("unknown score_mode: " + s);
}

struct RidgeSpec {
    std::vector<double> alphas = default_alpha_grid(); // ascending, > 0
    bool per_voxel = false;
    bool normalize_features = true;
    bool normalize_targets = true;
    int nested_folds = 2;
    ScoreMode score_mode = ScoreMode::fold_mean;
};

/// Per-voxel weights plus the training statistics needed to apply them.
struct RidgeModel {
    Eigen::MatrixXd weights;         // n_features x n_voxels (zeros for dropped columns)
    Eigen::VectorXd alpha_per_voxel; // n_voxels
    Eigen::VectorXd feature_mean, feature_std; // n_features (std 1 where unused)
    Eigen::VectorXd target_mean, target_std;   // n_voxels
};

struct ScoreReport {
    Eigen::VectorXd per_voxel_r;
    std::map<std::string, double> roi_means;
    std::vector<Eigen::VectorXd> per_fold;
    nlohmann::json provenance;
};

namespace detail {

inline void parallel_for(Eigen::Index n, int threads,
                         const std::function<void(Eigen::Index, Eigen::Index)>& body) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 1 || n < 2) {
        body(0, n);
        return;
    }
    const auto t = std::min<Eigen::Index>(threads, n);
    const Eigen::Index chunk = (n + t - 1) / t;
    std::vector<std::thread> pool;
    for (Eigen::Index i = 0; i < t; ++i) {
        const Eigen::Index s = i * chunk;
        const Eigen::Index e = std::min(n, s + chunk);
        if (s >= e) break;
        pool.emplace_back(body, s, e);
    }
    for (auto& th : pool) th.join();
}

/// Column statistics from the given rows only. Zero-variance columns are
/// recorded for dropping; their std is kept at 1.
struct ColumnTransform {
    Eigen::VectorXd mean, std;       // full width
    std::vector<Eigen::Index> kept;  // columns with positive training variance
    bool center = false;
};

inline ColumnTransform column_transform(const Eigen::MatrixXd& m,
                                        const std::vector<Eigen::Index>& rows,
                                        bool normalize) {
    const Eigen::Index p = m.cols();
    const auto n = static_cast<double>(rows.size());
    ColumnTransform tf;
    tf.center = normalize;
    tf.mean = Eigen::VectorXd::Zero(p);
    tf.std = Eigen::VectorXd::Ones(p);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(p);
    for (const Eigen::Index r : rows) sum += m.row(r).transpose();
    const Eigen::VectorXd mu = sum / n;
    for (const Eigen::Index r : rows)
        var += (m.row(r).transpose() - mu).array().square().matrix();
    var /= n;
    for (Eigen::Index j = 0; j < p; ++j) {
        if (var[j] > 0.0) tf.kept.push_back(j);
        if (normalize) {
            tf.mean[j] = mu[j];
            if (var[j] > 0.0) tf.std[j] = std::sqrt(var[j]);
        }
    }
    return tf;
}

/// Rows x kept-columns view of m, normalized by the transform.
inline Eigen::MatrixXd gather_normalized(const Eigen::MatrixXd& m,
                                         const std::vector<Eigen::Index>& rows,
                                         const ColumnTransform& tf) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(tf.kept.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < tf.kept.size(); ++j) {
            const Eigen::Index c = tf.kept[j];
            double v = m(rows[i], c);
            if (tf.center) v = (v - tf.mean[c]) / tf.std[c];
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        }
    return out;
}

/// All-column variant used for targets (no dropping).
inline Eigen::MatrixXd gather_normalized_all(const Eigen::MatrixXd& m,
                                             const std::vector<Eigen::Index>& rows,
                                             const ColumnTransform& tf) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double v = m(rows[i], c);
            if (tf.center) v = (v - tf.mean[c]) / tf.std[c];
            out(static_cast<Eigen::Index>(i), c) = v;
        }
    return out;
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m,
                                   const std::vector<Eigen::Index>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
        out(static_cast<Eigen::Index>(i)) = 0, out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

/// Thin SVD reused across the whole alpha grid.
struct SvdPath {
    Eigen::MatrixXd v;  // p x r
    Eigen::VectorXd s;  // r
    Eigen::MatrixXd ut; // r x n
};

inline SvdPath make_svd_path(const Eigen::MatrixXd& x) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success)
        throw numeric_error("ridge: SVD failed to converge");
    return {svd.matrixV(), svd.singularValues(), svd.matrixU().transpose()};
}

/// Ridge weights at one alpha via singular-value shrinkage s/(s^2+alpha).
/// b = Ut * Y must be precomputed.
inline Eigen::MatrixXd shrinkage_weights(const SvdPath& path, const Eigen::MatrixXd& b,
                                         double alpha) {
    const Eigen::ArrayXd shrink =
        path.s.array() / (path.s.array().square() + alpha);
    return path.v * (shrink.matrix().asDiagonal() * b);
}

} // namespace detail

/// Weights for every alpha in the grid from one thin SVD of X. Pure
/// solver: no normalization, no column handling.
inline std::vector<Eigen::MatrixXd> ridge_path(const Eigen::MatrixXd& x,
                                               const Eigen::MatrixXd& y,
                                               const std::vector<double>& alphas) {
    if (x.rows() != y.rows()) throw validation_error("ridge_path: row mismatch");
    if (alphas.empty()) throw validation_error("ridge_path: empty alpha grid");
    for (const double a : alphas)
        if (!(a > 0.0)) throw validation_error("ridge_path: alphas must be > 0");
    const auto path = detail::make_svd_path(x);
    const Eigen::MatrixXd b = path.ut * y;
    std::vector<Eigen::MatrixXd> weights;
    weights.reserve(alphas.size());
    for (const double a : alphas)
        weights.push_back(detail::shrinkage_weights(path, b, a));
    return weights;
}

namespace detail {

inline void check_spec(const RidgeSpec& spec) {
    if (spec.alphas.empty()) throw validation_error("ridge: empty alpha grid");
    for (std::size_t i = 0; i < spec.alphas.size(); ++i) {
        if (!(spec.alphas[i] > 0.0)) throw validation_error("ridge: alphas must be > 0");
        if (i > 0 && spec.alphas[i] < spec.alphas[i - 1])
            throw validation_error("ridge: alphas must ascend");
    }
    if (spec.nested_folds < 2) throw validation_error("ridge: nested_folds must be >= 2");
}

/// Mean nested-CV correlation per (alpha, voxel), computed entirely
/// within the given training rows. Normalization is re-estimated inside
/// each nested split so no test row ever touches a statistic.
inline Eigen::MatrixXd nested_alpha_scores(const Eigen::MatrixXd& x,
                                           const Eigen::MatrixXd& y,
                                           const std::vector<Eigen::Index>& train,
                                           const RidgeSpec& spec, int threads) {
    const auto n_alphas = static_cast<Eigen::Index>(spec.alphas.size());
    const Eigen::Index v = y.cols();
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(n_alphas, v);

    const auto edges = block_edges(static_cast<Eigen::Index>(train.size()), spec.nested_folds);
    for (const auto& [s, e] : edges) {
        std::vector<Eigen::Index> ntr, nte;
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto idx = static_cast<Eigen::Index>(i);
            (idx >= s && idx < e ? nte : ntr).push_back(train[i]);
        }
        if (nte.size() < 2)
            throw validation_error("ridge: nested test fold smaller than 2 rows");
        if (ntr.empty())
            throw validation_error("ridge: nested train fold empty");

        const auto ftf = column_transform(x, ntr, spec.normalize_features);
        const auto ttf = column_transform(y, ntr, spec.normalize_targets);
        const Eigen::MatrixXd xn = gather_normalized(x, ntr, ftf);
        const Eigen::MatrixXd yn = gather_normalized_all(y, ntr, ttf);
        const auto path = make_svd_path(xn);
        const Eigen::MatrixXd b = path.ut * yn;
        const Eigen::MatrixXd xt = gather_normalized(x, nte, ftf);
        const Eigen::MatrixXd yt = gather_rows(y, nte);

        for (Eigen::Index ai = 0; ai < n_alphas; ++ai) {
            const Eigen::MatrixXd w = shrinkage_weights(path, b, spec.alphas[ai]);
            Eigen::MatrixXd pred = xt * w;
            if (ttf.center) {
                pred.array().rowwise() *= ttf.std.transpose().array();
                pred.array().rowwise() += ttf.mean.transpose().array();
            }
            parallel_for(v, threads, [&](Eigen::Index lo, Eigen::Index hi) {
                for (Eigen::Index j = lo; j < hi; ++j)
                    scores(ai, j) += pearson_r(pred.col(j), yt.col(j));
            });
        }
    }
    return scores / static_cast<double>(spec.nested_folds);
}

/// Argmax over the (ascending) alpha grid; ties go to the larger alpha.
inline Eigen::Index pick_alpha(const Eigen::Ref<const Eigen::VectorXd>& scores) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < scores.size(); ++i)
        if (scores[i] >= scores[best]) best = i;
    return best;
}

struct FoldFit {
    RidgeModel model;
    Eigen::MatrixXd predictions; // test rows x voxels, target scale
    Eigen::VectorXd r;           // per voxel
};

inline FoldFit fit_one_fold(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                            const std::vector<Eigen::Index>& train,
                            const std::vector<Eigen::Index>& test,
                            const RidgeSpec& spec, int threads) {
    const Eigen::Index p = x.cols();
    const Eigen::Index v = y.cols();
    if (test.size() < 2)
        throw validation_error("ridge: test fold smaller than 2 rows");

    const Eigen::MatrixXd scores = nested_alpha_scores(x, y, train, spec, threads);
    Eigen::VectorXi alpha_idx(v);
    if (spec.per_voxel) {
        parallel_for(v, threads, [&](Eigen::Index lo, Eigen::Index hi) {
            for (Eigen::Index j = lo; j < hi; ++j)
                alpha_idx[j] = static_cast<int>(pick_alpha(scores.col(j)));
        });
    } else {
        const Eigen::VectorXd mean_scores = scores.rowwise().mean();
        alpha_idx.setConstant(static_cast<int>(pick_alpha(mean_scores)));
    }

    const auto ftf = column_transform(x, train, spec.normalize_features);
    const auto ttf = column_transform(y, train, spec.normalize_targets);
    const Eigen::MatrixXd xn = gather_normalized(x, train, ftf);
    const Eigen::MatrixXd yn = gather_normalized_all(y, train, ttf);
    const auto path = make_svd_path(xn);
    const Eigen::MatrixXd b = path.ut * yn;

    FoldFit fit;
    fit.model.weights = Eigen::MatrixXd::Zero(p, v);
    fit.model.alpha_per_voxel.resize(v);
    fit.model.feature_mean = ftf.mean;
    fit.model.feature_std = ftf.std;
    fit.model.target_mean = ttf.center ? ttf.mean : Eigen::VectorXd::Zero(v);
    fit.model.target_std = ttf.center ? ttf.std : Eigen::VectorXd::Ones(v);

    // one shrinkage solve per distinct alpha, columns routed per voxel
    std::vector<char> used(spec.alphas.size(), 0);
    for (Eigen::Index j = 0; j < v; ++j) used[static_cast<std::size_t>(alpha_idx[j])] = 1;
    const auto n_kept = static_cast<Eigen::Index>(ftf.kept.size());
    Eigen::MatrixXd w_sel(n_kept, v);
    for (std::size_t ai = 0; ai < spec.alphas.size(); ++ai) {
        if (!used[ai]) continue;
        const Eigen::MatrixXd w = shrinkage_weights(path, b, spec.alphas[ai]);
        for (Eigen::Index j = 0; j < v; ++j)
            if (alpha_idx[j] == static_cast<int>(ai)) w_sel.col(j) = w.col(j);
    }
    for (Eigen::Index j = 0; j < v; ++j) {
        fit.model.alpha_per_voxel[j] = spec.alphas[static_cast<std::size_t>(alpha_idx[j])];
        for (Eigen::Index kj = 0; kj < n_kept; ++kj)
            fit.model.weights(ftf.kept[static_cast<std::size_t>(kj)], j) = w_sel(kj, j);
    }

    const Eigen::MatrixXd xt = gather_normalized(x, test, ftf);
    fit.predictions = xt * w_sel;
    if (ttf.center) {
        fit.predictions.array().rowwise() *= ttf.std.transpose().array();
        fit.predictions.array().rowwise() += ttf.mean.transpose().array();
    }
    const Eigen::MatrixXd yt = gather_rows(y, test);
    fit.r.resize(v);
    parallel_for(v, threads, [&](Eigen::Index lo, Eigen::Index hi) {
        for (Eigen::Index j = lo; j < hi; ++j)
            fit.r[j] = pearson_r(fit.predictions.col(j), yt.col(j));
    });
    return fit;
}

} // namespace detail

/// Leakage-aware cross-validated ridge: per fold, normalization
/// statistics and alpha selection use training rows only; test
/// predictions are mapped back to target scale before scoring.
inline std::pair<std::vector<RidgeModel>, ScoreReport>
ridge_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const RidgeSpec& spec,
          const FoldPlan& plan, int threads = 1) {
    if (x.rows() != y.rows()) throw validation_error("ridge_fit: X/Y row mismatch");
    if (!x.allFinite() || !y.allFinite())
        throw validation_error("ridge_fit: non-finite inputs");
    if (plan.n != x.rows())
        throw validation_error("ridge_fit: fold plan covers " + std::to_string(plan.n) +
                               " rows, data has " + std::to_string(x.rows()));
    detail::check_spec(spec);

    const Eigen::Index v = y.cols();
    std::vector<RidgeModel> models;
    ScoreReport report;
    report.per_voxel_r = Eigen::VectorXd::Zero(v);

    Eigen::MatrixXd pooled;
    if (spec.score_mode == ScoreMode::pooled)
        pooled = Eigen::MatrixXd::Zero(x.rows(), v);

    for (const auto& fold : plan.folds) {
        auto fit = detail::fit_one_fold(x, y, fold.train, fold.test, spec, threads);
        report.per_fold.push_back(fit.r);
        report.per_voxel_r += fit.r;
        if (spec.score_mode == ScoreMode::pooled)
            for (std::size_t i = 0; i < fold.test.size(); ++i)
                pooled.row(fold.test[i]) = fit.predictions.row(static_cast<Eigen::Index>(i));
        models.push_back(std::move(fit.model));
    }
    report.per_voxel_r /= static_cast<double>(plan.folds.size());

    if (spec.score_mode == ScoreMode::pooled) {
        detail::parallel_for(v, threads, [&](Eigen::Index lo, Eigen::Index hi) {
            for (Eigen::Index j = lo; j < hi; ++j)
                report.per_voxel_r[j] = pearson_r(pooled.col(j), y.col(j));
        });
    }

    report.provenance = {
        {"solver", "svd_path"},
        {"alphas", spec.alphas},
        {"per_voxel", spec.per_voxel},
        {"normalize_features", spec.normalize_features},
        {"normalize_targets", spec.normalize_targets},
        {"nested_folds", spec.nested_folds},
        {"score_mode", to_string(spec.score_mode)},
        {"folding", {{"scheme", to_string(plan.scheme)},
                     {"k_folds", plan.k_folds},
                     {"trim_trs", plan.trim_trs},
                     {"seed", plan.seed},
                     {"n", plan.n}}},
    };
    return {std::move(models), std::move(report)};
}

/// Single fit on all training rows (alpha by nested CV within training),
/// evaluated once on the held-out rows.
inline ScoreReport heldout_fit(const Eigen::MatrixXd& x_train, const Eigen::MatrixXd& y_train,
                               const Eigen::MatrixXd& x_test, const Eigen::MatrixXd& y_test,
                               const RidgeSpec& spec, int threads = 1) {
    if (x_train.cols() != x_test.cols())
        throw validation_error("heldout_fit: train/test feature widths differ");
    if (x_train.rows() != y_train.rows() || x_test.rows() != y_test.rows())
        throw validation_error("heldout_fit: X/Y row mismatch");
    if (y_train.cols() != y_test.cols())
        throw validation_error("heldout_fit: train/test voxel counts differ");
    if (!x_train.allFinite() || !y_train.allFinite() || !x_test.allFinite() || !y_test.allFinite())
        throw validation_error("heldout_fit: non-finite inputs");
    detail::check_spec(spec);

    std::vector<Eigen::Index> train(static_cast<std::size_t>(x_train.rows()));
    std::iota(train.begin(), train.end(), Eigen::Index{0});
    std::vector<Eigen::Index> test(static_cast<std::size_t>(x_test.rows()));
    std::iota(test.begin(), test.end(), Eigen::Index{0});

    // stack train and test so the shared fold machinery applies
    Eigen::MatrixXd x(x_train.rows() + x_test.rows(), x_train.cols());
    x << x_train, x_test;
    Eigen::MatrixXd y(y_train.rows() + y_test.rows(), y_train.cols());
    y << y_train, y_test;
    for (auto& idx : test) idx += x_train.rows();

    auto fit = detail::fit_one_fold(x, y, train, test, spec, threads);
    ScoreReport report;
    report.per_voxel_r = fit.r;
    report.per_fold.push_back(fit.r);
    report.provenance = {
        {"solver", "svd_path"},
        {"alphas", spec.alphas},
        {"per_voxel", spec.per_voxel},
        {"normalize_features", spec.normalize_features},
        {"normalize_targets", spec.normalize_targets},
        {"nested_folds", spec.nested_folds},
        {"evaluation", "heldout"},
    };
    return report;
}

/// Elementwise mean across repeated presentations of one stimulus.
inline Eigen::MatrixXd average_repetitions(const std::vector<Eigen::MatrixXd>& reps) {
    if (reps.empty()) throw validation_error("average_repetitions: no matrices");
    Eigen::MatrixXd acc = reps.front();
    for (std::size_t i = 1; i < reps.size(); ++i) {
        if (reps[i].rows() != acc.rows() || reps[i].cols() != acc.cols())
            throw validation_error("average_repetitions: shape mismatch");
        acc += reps[i];
    }
    return acc / static_cast<double>(reps.size());
}

/// Mean per-voxel correlation within each named mask.
inline std::map<std::string, double>
aggregate_roi(const ScoreReport& report,
              const std::map<std::string, std::vector<std::uint8_t>>& masks) {
    std::map<std::string, double> out;
    for (const auto& [name, mask] : masks) {
        if (static_cast<Eigen::Index>(mask.size()) != report.per_voxel_r.size())
            throw validation_error("aggregate_roi: mask " + name + " length mismatch");
        double sum = 0.0;
        Eigen::Index count = 0;
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i]) {
                sum += report.per_voxel_r[static_cast<Eigen::Index>(i)];
                ++count;
            }
        out[name] = count > 0 ? sum / static_cast<double>(count) : 0.0;
    }
    return out;
}

} // namespace voxenc
