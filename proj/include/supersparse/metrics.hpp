#pragma once

#include "common.hpp"
#include "core_types.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace supersparse {

namespace detail {
inline void check_pair(const VectorRef& pred, const VectorRef& truth) {
    require(pred.size() == truth.size(), "metric: prediction and truth lengths differ");
    require(pred.size() > 0, "metric: empty input");
}
}  // namespace detail

inline double mae(const VectorRef& pred, const VectorRef& truth) {
    detail::check_pair(pred, truth);
    return (pred - truth).cwiseAbs().mean();
}

inline double mse(const VectorRef& pred, const VectorRef& truth) {
    detail::check_pair(pred, truth);
    return (pred - truth).squaredNorm() / static_cast<double>(pred.size());
}

/// Fraction of samples whose predicted sign differs from the sign of the truth (0 counts as +1).
inline double error_rate(const VectorRef& pred, const VectorRef& truth) {
    detail::check_pair(pred, truth);
    Index wrong = 0;
    for (Index i = 0; i < pred.size(); ++i) {
        if ((pred[i] >= 0.0) != (truth[i] >= 0.0)) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

struct OperatingPoint {
    double threshold = 0.0;
    double far = 0.0;
    double frr = 0.0;
};

/**
 * FAR/FRR as the acceptance threshold sweeps from -inf to +inf.
 *
 * A score is accepted when score >= threshold. One point per distinct score,
 * plus the two infinite endpoints, in increasing threshold order.
 */
inline std::vector<OperatingPoint> far_frr_curve(std::span<const double> genuine, std::span<const double> impostor) {
    require(!genuine.empty(), "far_frr_curve: genuine scores are empty");
    require(!impostor.empty(), "far_frr_curve: impostor scores are empty");
    std::vector<double> g(genuine.begin(), genuine.end());
    std::vector<double> im(impostor.begin(), impostor.end());
    std::sort(g.begin(), g.end());
    std::sort(im.begin(), im.end());

    std::vector<double> thresholds;
    thresholds.reserve(g.size() + im.size() + 2);
    thresholds.push_back(-std::numeric_limits<double>::infinity());
    std::merge(g.begin(), g.end(), im.begin(), im.end(), std::back_inserter(thresholds));
    thresholds.push_back(std::numeric_limits<double>::infinity());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double n_genuine = static_cast<double>(g.size());
    const double n_impostor = static_cast<double>(im.size());
    std::vector<OperatingPoint> curve;
    curve.reserve(thresholds.size());
    for (double threshold : thresholds) {
        const auto rejected_genuine = std::lower_bound(g.begin(), g.end(), threshold) - g.begin();
        const auto rejected_impostor = std::lower_bound(im.begin(), im.end(), threshold) - im.begin();
        OperatingPoint point;
        point.threshold = threshold;
        point.frr = static_cast<double>(rejected_genuine) / n_genuine;
        point.far = (n_impostor - static_cast<double>(rejected_impostor)) / n_impostor;
        curve.push_back(point);
    }
    return curve;
}

/// Similarity evaluations spent predicting every row of `rows`.
inline std::uint64_t eval_cost(const SparseModel& model, const Matrix& rows) {
    const std::uint64_t before = model.similarity().evaluations();
    for (Index i = 0; i < rows.rows(); ++i) {
        (void)predict(model, rows.row(i).transpose());
    }
    return model.similarity().evaluations() - before;
}

/// Similarity evaluations for one prediction, probed at the first prototype.
inline std::uint64_t eval_cost(const SparseModel& model) {
    return eval_cost(model, Matrix(model.prototypes().topRows(1)));
}

}  // namespace supersparse
