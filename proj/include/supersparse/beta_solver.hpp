#pragma once

#include "common.hpp"
#include "similarity.hpp"

#include <algorithm>
#include <optional>
#include <string>

namespace supersparse {

/**
 * Normal equations for (beta, b) with the prototypes held fixed:
 *
 *   [ S'US + lambda I   S'U1 ] [beta]   [S']
 *   [ 1'US              1'U1 ] [ b  ] = [1'] U y
 */
struct BetaSystem {
    Eigen::MatrixXd matrix;
    Vector rhs;

    Index prototypes() const { return matrix.rows() - 1; }
};

inline BetaSystem assemble(const SimilarityMatrix& similarities, const VectorRef& weights, const VectorRef& targets,
                           double lambda) {
    const Index n = similarities.rows();
    const Index m = similarities.cols();
    require(weights.size() == n && targets.size() == n, "assemble: weights/targets length must match similarity rows");
    require(std::isfinite(lambda) && lambda >= 0.0, "assemble: lambda must be >= 0");

    // Augmented design [S 1]; M = A'UA + lambda on the beta block.
    Eigen::MatrixXd design(n, m + 1);
    design.leftCols(m) = similarities;
    design.col(m).setOnes();
    const Eigen::MatrixXd weighted = weights.asDiagonal() * design;

    BetaSystem system;
    system.matrix = design.transpose() * weighted;
    system.matrix.diagonal().head(m).array() += lambda;
    // Exact symmetry; the two triangles can differ in the last bit.
    system.matrix = 0.5 * (system.matrix + system.matrix.transpose()).eval();
    system.rhs = weighted.transpose() * targets;
    return system;
}

struct BetaSolution {
    Vector beta;
    double bias = 0.0;
    double jitter = 0.0;
    double residual = 0.0;  // ||M x - rhs|| for the factored (possibly jittered) system
    int refinement_steps = 0;
};

/// Reciprocal condition estimate below which the system is treated as singular.
inline constexpr double kMinReciprocalCondition = 1e-14;

/**
 * LDL' factorization of a BetaSystem, reused for the beta-step and for the
 * coefficient sensitivities of the prototype gradient.
 *
 * A numerically singular M gets a diagonal jitter of 1e-10 trace(M)/(m+1)
 * and one retry; if that also fails, SingularSystemError is thrown.
 */
class FactoredBetaSystem {
public:
    explicit FactoredBetaSystem(BetaSystem system) : system_(std::move(system)) {
        require(system_.matrix.rows() == system_.matrix.cols() && system_.matrix.rows() == system_.rhs.size(),
                "beta system is not square or rhs length differs");
        require(system_.matrix.allFinite() && system_.rhs.allFinite(), "beta system has non-finite entries");
        factored_ = system_.matrix;
        ldlt_.compute(factored_);
        if (!usable()) {
            const double size = static_cast<double>(factored_.rows());
            jitter_ = 1e-10 * system_.matrix.trace() / size;
            if (!(jitter_ > 0.0)) jitter_ = 1e-10;
            factored_.diagonal().array() += jitter_;
            ldlt_.compute(factored_);
            if (!usable()) {
                throw SingularSystemError("beta system is singular even after diagonal jitter " +
                                          std::to_string(jitter_) + " (reciprocal condition " +
                                          std::to_string(reciprocal_condition()) + ")");
            }
        }
    }

    const BetaSystem& system() const { return system_; }
    double jitter() const { return jitter_; }
    /// Smaller of the LDL' condition estimate and the pivot magnitude ratio min|D| / max|D|.
    double reciprocal_condition() const {
        const Vector pivots = ldlt_.vectorD().cwiseAbs();
        const double largest = pivots.maxCoeff();
        const double ratio = largest > 0.0 ? pivots.minCoeff() / largest : 0.0;
        return std::min(ldlt_.rcond(), ratio);
    }

    /// M^{-1} B for the factored matrix, without forming the inverse.
    Eigen::MatrixXd apply_inverse(const Eigen::MatrixXd& rhs) const { return ldlt_.solve(rhs); }

    /// ||M x - rhs|| against the factored matrix.
    double residual_norm(const VectorRef& x) const { return (factored_ * x - system_.rhs).norm(); }

    /// Solve with iterative refinement, optionally starting from a previous solution.
    BetaSolution solve(const std::optional<Vector>& warm_start = std::nullopt) const {
        const Index size = system_.rhs.size();
        Vector x;
        if (warm_start && warm_start->size() == size && warm_start->allFinite()) {
            x = *warm_start;
        } else {
            x = ldlt_.solve(system_.rhs);
        }
        const double scale = std::max(system_.rhs.norm(), 1e-300);
        BetaSolution solution;
        Vector residual = system_.rhs - factored_ * x;
        for (int step = 0; step < 8 && residual.norm() > 1e-13 * scale; ++step) {
            x += ldlt_.solve(residual);
            residual = system_.rhs - factored_ * x;
            ++solution.refinement_steps;
        }
        if (!x.allFinite()) {
            throw SingularSystemError("beta solve produced non-finite coefficients");
        }
        solution.beta = x.head(size - 1);
        solution.bias = x[size - 1];
        solution.jitter = jitter_;
        solution.residual = residual.norm();
        return solution;
    }

private:
    bool usable() const {
        // rcond() alone misses exactly zero pivots, which the LDL' solve silently skips.
        return ldlt_.info() == Eigen::Success && reciprocal_condition() >= kMinReciprocalCondition;
    }

    BetaSystem system_;
    Eigen::MatrixXd factored_;
    Eigen::LDLT<Eigen::MatrixXd> ldlt_;
    double jitter_ = 0.0;
};

inline BetaSolution solve(const BetaSystem& system, const std::optional<Vector>& warm_start = std::nullopt) {
    return FactoredBetaSystem(system).solve(warm_start);
}

/// beta-step for a fixed set of prototypes.
inline BetaSolution solve_coefficients(const SimilarityMatrix& similarities, const VectorRef& weights,
                                       const VectorRef& targets, double lambda) {
    return solve(assemble(similarities, weights, targets, lambda));
}

}  // namespace supersparse
