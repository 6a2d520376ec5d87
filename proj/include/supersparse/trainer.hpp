#pragma once

#include "beta_solver.hpp"
#include "common.hpp"
#include "core_types.hpp"
#include "similarity.hpp"
#include "z_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

namespace supersparse {

enum class Termination { converged, max_sweeps, error };

inline std::string_view to_string(Termination reason) {
    switch (reason) {
        case Termination::converged: return "converged";
        case Termination::max_sweeps: return "max_sweeps";
        case Termination::error: return "error";
    }
    return "unknown";
}

struct IterationRecord {
    std::int64_t t = 0;
    Index j = 0;
    double omega_previous = 0.0;  // objective at the end of iteration t-1
    double omega_after_z = 0.0;   // new prototype, coefficients of iteration t-1
    double omega = 0.0;           // after the beta-step
    double step_norm = 0.0;
};

struct TrainTrace {
    double initial_objective = 0.0;
    std::vector<IterationRecord> records;
    Termination termination = Termination::max_sweeps;
    std::string error;

    double final_objective() const { return records.empty() ? initial_objective : records.back().omega; }
};

struct FitResult {
    SparseModel model;
    TrainTrace trace;
};

/**
 * m distinct training rows drawn uniformly without replacement.
 *
 * When m >= 2 and the targets take both signs, the draw is adjusted so that
 * rows with negative and non-negative targets are both represented.
 */
inline Matrix init_prototypes(const Dataset& data, Index m, std::uint64_t seed) {
    if (m < 1 || m > data.size()) {
        throw InvalidArgument("init_prototypes: m must be in [1, " + std::to_string(data.size()) + "], got " +
                              std::to_string(m));
    }
    std::vector<Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Index{0});
    auto rng = make_rng(seed, 0x1417ULL);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Index> chosen(order.begin(), order.begin() + m);

    if (m >= 2) {
        const Vector& y = data.targets();
        for (bool positive : {true, false}) {
            auto has_sign = [&](Index i) { return (y[i] >= 0.0) == positive; };
            if (std::any_of(chosen.begin(), chosen.end(), has_sign)) continue;
            const auto candidate = std::find_if(order.begin() + m, order.end(), has_sign);
            if (candidate == order.end()) continue;
            chosen.back() = *candidate;
        }
    }

    Matrix prototypes(m, data.dimension());
    for (Index k = 0; k < m; ++k) prototypes.row(k) = data.features().row(chosen[static_cast<std::size_t>(k)]);
    return prototypes;
}

/**
 * Alternating optimization starting from the given prototypes: at iteration t
 * prototype j = t mod m takes one projected gradient step, then (beta, b) are
 * re-solved exactly. Stops once |Omega(t) - Omega(t-1)| < epsilon after at
 * least one full sweep, or after max_sweeps sweeps.
 *
 * Errors raised by the steps end the run; the last consistent model is
 * returned with Termination::error and the message in the trace.
 */
inline FitResult fit_from(const Dataset& data, const Matrix& initial_prototypes, const TrainConfig& config,
                          const Similarity& similarity) {
    config.validate();
    require(initial_prototypes.cols() == data.dimension(), "fit: prototypes and data dimensions differ");
    require(initial_prototypes.rows() >= 1 && initial_prototypes.rows() <= data.size(),
            "fit: number of prototypes must be in [1, n]");
    const Index m = initial_prototypes.rows();

    Matrix start = initial_prototypes;
    if (const auto box = config.resolved_box(data.features())) {
        for (Index k = 0; k < m; ++k) start.row(k) = box->project(start.row(k).transpose()).transpose();
    }

    SimilarityMatrix s = sim_matrix(similarity, data.features(), start);
    BetaSolution coefficients = solve_coefficients(s, data.weights(), data.targets(), config.lambda);
    SparseModel model(start, coefficients.beta, coefficients.bias, similarity);

    TrainTrace trace;
    trace.initial_objective = objective(s, model.beta(), model.bias(), data, config.lambda).total;
    double omega_previous = trace.initial_objective;
    const std::int64_t max_iterations = static_cast<std::int64_t>(config.max_sweeps) * m;

    std::int64_t t = 0;
    try {
        while (true) {
            const Index j = static_cast<Index>(t % m);
            ++t;
            ZStep moved = step(model, j, data, config, t);

            s = sim_matrix(similarity, data.features(), moved.model.prototypes());
            IterationRecord record;
            record.t = t;
            record.j = j;
            record.omega_previous = omega_previous;
            record.omega_after_z = objective(s, moved.model.beta(), moved.model.bias(), data, config.lambda).total;
            coefficients = solve_coefficients(s, data.weights(), data.targets(), config.lambda);
            model = moved.model.with_coefficients(coefficients.beta, coefficients.bias);
            record.omega = objective(s, model.beta(), model.bias(), data, config.lambda).total;
            record.step_norm = moved.step_norm;
            trace.records.push_back(record);

            if (!std::isfinite(record.omega)) {
                throw EvaluationError("objective became non-finite at iteration " + std::to_string(t));
            }
            const bool full_sweep_done = t >= m;
            if (full_sweep_done && std::abs(record.omega - omega_previous) < config.epsilon) {
                trace.termination = Termination::converged;
                break;
            }
            omega_previous = record.omega;
            if (t >= max_iterations) {
                trace.termination = Termination::max_sweeps;
                break;
            }
        }
    } catch (const Error& e) {
        trace.termination = Termination::error;
        trace.error = e.what();
    }

    TrainingInfo info;
    info.lambda = config.lambda;
    info.iterations = static_cast<std::int64_t>(trace.records.size());
    info.seed = config.seed;
    info.objective = trace.final_objective();
    info.n_train = data.size();
    return FitResult{model.with_info(info), std::move(trace)};
}

inline FitResult fit(const Dataset& data, Index m, const TrainConfig& config, const Similarity& similarity) {
    config.validate();
    return fit_from(data, init_prototypes(data, m, config.seed), config, similarity);
}

/// Fit with the default rbf similarity, gamma = 1/d.
inline FitResult fit(const Dataset& data, Index m, const TrainConfig& config) {
    return fit(data, m, config, Similarity::rbf(default_gamma(data.dimension())));
}

/// Fit the sparse model to a teacher's discriminant values instead of labels.
inline FitResult distill_with_trace(const Matrix& features, const Vector& teacher_scores, Index m,
                                    const TrainConfig& config, const Similarity& similarity) {
    require(teacher_scores.size() == features.rows(), "distill: one teacher score per sample is required");
    require(teacher_scores.allFinite(), "distill: teacher scores must be finite");
    return fit(Dataset(features, teacher_scores), m, config, similarity);
}

inline SparseModel distill(const Matrix& features, const Vector& teacher_scores, Index m, const TrainConfig& config,
                           const Similarity& similarity) {
    return distill_with_trace(features, teacher_scores, m, config, similarity).model;
}

inline SparseModel distill(const Matrix& features, const Vector& teacher_scores, Index m, const TrainConfig& config) {
    return distill(features, teacher_scores, m, config, Similarity::rbf(default_gamma(features.cols())));
}

}  // namespace supersparse
