#pragma once

#include "beta_solver.hpp"
#include "common.hpp"
#include "core_types.hpp"
#include "similarity.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

namespace supersparse {

/// Gradient of the objective with respect to one prototype, with its parts kept for diagnostics.
struct ZGradient {
    Vector grad;
    Vector direct;       // 2 beta_j dS_j' U (g - y)
    Vector sensitivity;  // contribution through d(beta, b)/dz_j
    Vector penalty;      // separation penalty, pre-divided by eta so that eta * grad is the full displacement
};

/// Separation penalty settings at global iteration t.
struct PenaltyTerm {
    std::int64_t t = 1;
    double eta = 0.5;
    double decay_power = 2.0;
};

/// Coefficients are considered stale when the beta-system residual exceeds this (relative to max(1, ||rhs||)).
inline constexpr double kStaleCoefficientTolerance = 1e-6;

/**
 * t^{-p} * sum_{k != j} ds(z_k, z_j)/dz_j.
 *
 * Each summand points from z_j towards z_k (for rbf), so subtracting the
 * result pushes z_j away from the other prototypes.
 */
inline Vector penalty_grad(const SparseModel& model, Index j, std::int64_t t, double decay_power = 2.0,
                           GradMode mode = GradMode::analytic) {
    require(j >= 0 && j < model.size(), "penalty_grad: prototype index out of range");
    require(t >= 1, "penalty_grad: iteration count must be >= 1");
    const Matrix& z = model.prototypes();
    const Vector zj = z.row(j).transpose();
    Vector sum = Vector::Zero(model.dimension());
    for (Index k = 0; k < model.size(); ++k) {
        if (k == j) continue;
        sum += grad_z(model.similarity(), z.row(k).transpose(), zj, mode);
    }
    return std::pow(static_cast<double>(t), -decay_power) * sum;
}

/**
 * Total derivative d Omega / d z_j with beta and b treated as functions of the
 * prototypes through the beta-step optimality conditions:
 *
 *   d(beta, b)/dz_j = -M^{-1} (beta_j [S'; 1'] + [V'; 0']) U dS_j/dz_j
 *
 * where V is zero except for column j, which holds g - y. M^{-1} is applied
 * through the LDL' factorization, never formed. Requires the model's
 * coefficients to solve the beta system for its current prototypes.
 */
inline ZGradient grad_total(const Dataset& data, const SparseModel& model, Index j, double lambda, GradMode mode,
                            const std::optional<PenaltyTerm>& penalty = std::nullopt) {
    require(j >= 0 && j < model.size(), "grad_total: prototype index out of range");
    require(model.dimension() == data.dimension(), "grad_total: model and data dimensions differ");
    const Index n = data.size();
    const Index m = model.size();
    const Index d = model.dimension();
    const Similarity& sim = model.similarity();
    const Vector& u = data.weights();
    const Vector& beta = model.beta();

    const SimilarityMatrix s = sim_matrix(sim, data.features(), model.prototypes());
    const FactoredBetaSystem factored(assemble(s, u, data.targets(), lambda));

    Vector coefficients(m + 1);
    coefficients << beta, model.bias();
    const double scale = std::max(1.0, factored.system().rhs.norm());
    const double stale = factored.residual_norm(coefficients);
    if (!(stale <= kStaleCoefficientTolerance * scale)) {
        throw ContractViolation("grad_total: coefficients do not solve the beta system for the current prototypes "
                                "(residual " + std::to_string(stale) + "); run the beta-step first");
    }

    const Vector residual = (s * beta).array() + model.bias() - data.targets().array();
    const Vector weighted_residual = u.cwiseProduct(residual);

    const Vector zj = model.prototypes().row(j).transpose();
    Eigen::MatrixXd ds(n, d);
    for (Index i = 0; i < n; ++i) {
        ds.row(i) = grad_z(sim, data.features().row(i).transpose(), zj, mode).transpose();
    }
    const Eigen::MatrixXd weighted_ds = u.asDiagonal() * ds;

    ZGradient out;
    out.direct = 2.0 * beta[j] * (ds.transpose() * weighted_residual);

    Eigen::MatrixXd forcing(m + 1, d);
    forcing.topRows(m) = beta[j] * (s.transpose() * weighted_ds);
    forcing.row(m) = beta[j] * weighted_ds.colwise().sum();
    forcing.row(j) += residual.transpose() * weighted_ds;
    const Eigen::MatrixXd sensitivities = -factored.apply_inverse(forcing);

    Vector coefficient_grad(m + 1);
    coefficient_grad.head(m) = 2.0 * (s.transpose() * weighted_residual + lambda * beta);
    coefficient_grad[m] = 2.0 * weighted_residual.sum();
    out.sensitivity = sensitivities.transpose() * coefficient_grad;

    if (penalty) {
        out.penalty = penalty_grad(model, j, penalty->t, penalty->decay_power, mode) / penalty->eta;
    } else {
        out.penalty = Vector::Zero(d);
    }
    out.grad = out.direct + out.sensitivity + out.penalty;
    if (!out.grad.allFinite()) {
        throw EvaluationError("grad_total: non-finite gradient for prototype " + std::to_string(j));
    }
    return out;
}

struct ZStep {
    SparseModel model;  // prototype j moved; coefficients still those of the input model
    ZGradient gradient;
    double step_norm = 0.0;
    double eta_used = 0.0;
    bool jittered = false;
};

namespace detail {

inline constexpr double kCoincidenceDistance = 1e-12;
inline constexpr double kCoincidenceJitter = 1e-6;

inline bool coincides_with_other(const Matrix& prototypes, Index j) {
    for (Index k = 0; k < prototypes.rows(); ++k) {
        if (k != j && (prototypes.row(k) - prototypes.row(j)).norm() < kCoincidenceDistance) return true;
    }
    return false;
}

inline SparseModel resolve_coefficients(const SparseModel& model, const Dataset& data, double lambda) {
    const SimilarityMatrix s = sim_matrix(model.similarity(), data.features(), model.prototypes());
    const BetaSolution solution = solve_coefficients(s, data.weights(), data.targets(), lambda);
    return model.with_coefficients(solution.beta, solution.bias);
}

}  // namespace detail

/**
 * One projected gradient step on prototype j at global iteration t:
 *
 *   z_j <- clip(z_j - eta * dOmega/dz_j - t^{-p} dS_zz/dz_j, box)
 *
 * With normalize_step, eta is divided by sum(u) first.
 * All other prototypes are left untouched. A prototype sitting on top of
 * another one is first nudged by a seeded perturbation of length 1e-6, since
 * the rbf repulsion vanishes at zero distance.
 */
inline ZStep step(const SparseModel& model, Index j, const Dataset& data, const TrainConfig& config,
                  std::int64_t t) {
    require(j >= 0 && j < model.size(), "step: prototype index out of range");
    require(t >= 1, "step: iteration count must be >= 1");
    config.validate();

    SparseModel current = model;
    bool jittered = false;
    if (detail::coincides_with_other(current.prototypes(), j)) {
        auto rng = make_rng(config.seed, 0x6a1773ULL + static_cast<std::uint64_t>(t));
        std::normal_distribution<double> normal(0.0, 1.0);
        Vector direction(current.dimension());
        for (Index k = 0; k < direction.size(); ++k) direction[k] = normal(rng);
        if (direction.norm() == 0.0) direction.setOnes();
        direction *= detail::kCoincidenceJitter / direction.norm();
        const Vector moved = current.prototypes().row(j).transpose() + direction;
        current = detail::resolve_coefficients(current.with_prototype(j, moved), data, config.lambda);
        jittered = true;
    }

    ZGradient gradient = grad_total(data, current, j, config.lambda, config.grad_mode);
    const Vector repulsion = config.penalty_enabled
                                 ? penalty_grad(current, j, t, config.penalty_decay_power, config.grad_mode)
                                 : Vector::Zero(current.dimension());
    double eta = config.effective_eta(data.weights());
    gradient.penalty = repulsion / eta;
    gradient.grad += gradient.penalty;

    const std::optional<Box> box = config.resolved_box(data.features());
    const Vector zj = current.prototypes().row(j).transpose();
    for (int attempt = 0; attempt < 2; ++attempt) {
        Vector updated = zj - eta * (gradient.direct + gradient.sensitivity) - repulsion;
        if (box) updated = box->project(updated);
        if (updated.allFinite()) {
            const double norm = (updated - zj).norm();
            return ZStep{current.with_prototype(j, updated), gradient, norm, eta, jittered};
        }
        eta *= 0.5;
    }
    throw EvaluationError("step: non-finite update for prototype " + std::to_string(j) +
                          " even after halving the step size");
}

}  // namespace supersparse
