#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace supersparse;

namespace {

struct Instance {
    Eigen::MatrixXd s;
    Vector u;
    Vector y;
    double lambda;
};

Instance random_instance(std::mt19937_64& rng, Index n, Index m, Index d, double lambda) {
    const Matrix x = oracle::random_matrix(n, d, rng);
    const Matrix z = oracle::random_matrix(m, d, rng);
    return Instance{oracle::rbf_matrix(x, z, 1.0 / static_cast<double>(d)), oracle::random_weights(n, rng),
                    oracle::random_vector(n, rng), lambda};
}

}  // namespace

TEST(Assemble, HandBuiltTwoByTwo) {
    Eigen::MatrixXd s(2, 1);
    s << 1, 0;
    const BetaSystem system = assemble(s, Vector::Ones(2), Vector((Vector(2) << 1, 0).finished()), 0.0);
    Eigen::MatrixXd expected(2, 2);
    expected << 1, 1, 1, 2;
    EXPECT_TRUE(system.matrix.isApprox(expected, 0.0));
    EXPECT_TRUE(system.rhs.isApprox(Vector::Ones(2), 0.0));
    const BetaSolution solution = solve(system);
    EXPECT_NEAR(solution.beta[0], 1.0, 1e-14);
    EXPECT_NEAR(solution.bias, 0.0, 1e-14);
}

TEST(Assemble, LambdaOnlyTouchesBetaDiagonal) {
    std::mt19937_64 rng(1);
    const Instance inst = random_instance(rng, 12, 3, 2, 0.0);
    const BetaSystem a = assemble(inst.s, inst.u, inst.y, 0.0);
    const BetaSystem b = assemble(inst.s, inst.u, inst.y, 0.75);
    Eigen::MatrixXd diff = b.matrix - a.matrix;
    for (Index k = 0; k < 3; ++k) EXPECT_NEAR(diff(k, k), 0.75, 1e-15);
    diff.diagonal().head(3).setZero();
    EXPECT_TRUE(diff.isZero(0.0));
    EXPECT_TRUE(a.rhs.isApprox(b.rhs, 0.0));
}

TEST(Assemble, RejectsNegativeLambdaAndShapeMismatch) {
    Eigen::MatrixXd s = Eigen::MatrixXd::Ones(3, 1);
    EXPECT_THROW(assemble(s, Vector::Ones(3), Vector::Ones(3), -1.0), InvalidArgument);
    EXPECT_THROW(assemble(s, Vector::Ones(2), Vector::Ones(3), 0.0), InvalidArgument);
}

TEST(Solve, ConstantTargetsGiveZeroBetaAndConstantBias) {
    std::mt19937_64 rng(2);
    const Instance inst = random_instance(rng, 15, 4, 3, 0.1);
    const BetaSolution solution = solve_coefficients(inst.s, inst.u, Vector::Constant(15, -2.5), 0.1);
    EXPECT_LT(solution.beta.norm(), 1e-12);
    EXPECT_NEAR(solution.bias, -2.5, 1e-12);
}

TEST(Solve, MatchesNormalEquationOracle) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 50; ++k) {
        const Index n = 5 + k % 30;
        const Index m = 1 + k % 5;
        const Instance inst = random_instance(rng, n, m, 1 + k % 3, k % 2 == 0 ? 1e-3 : 0.5);
        const BetaSolution solution = solve_coefficients(inst.s, inst.u, inst.y, inst.lambda);
        const oracle::Coefficients expected = oracle::normal_equations(inst.s, inst.u, inst.y, inst.lambda);
        Vector got(m + 1), want(m + 1);
        got << solution.beta, solution.bias;
        want << expected.beta, expected.bias;
        EXPECT_LT((got - want).norm() / want.norm(), 1e-8) << "instance " << k;
    }
}

TEST(Solve, ResidualIsSmall) {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 20; ++k) {
        const Instance inst = random_instance(rng, 25, 5, 2, 1e-6);
        const BetaSystem system = assemble(inst.s, inst.u, inst.y, inst.lambda);
        const BetaSolution solution = solve(system);
        Vector x(6);
        x << solution.beta, solution.bias;
        EXPECT_LE((system.matrix * x - system.rhs).norm(), 1e-9 * system.rhs.norm());
    }
}

TEST(Solve, IsMinimalAgainstRandomProbes) {
    std::mt19937_64 rng(5);
    const Instance inst = random_instance(rng, 20, 4, 2, 0.01);
    const BetaSolution solution = solve_coefficients(inst.s, inst.u, inst.y, inst.lambda);
    const double best = oracle::objective(inst.s, solution.beta, solution.bias, inst.y, inst.u, inst.lambda);
    std::uniform_real_distribution<double> radius(0.0, 1.0);
    for (int k = 0; k < 1000; ++k) {
        Vector delta = oracle::random_vector(5, rng);
        delta *= 1e-2 * radius(rng) / delta.norm();
        const double probed = oracle::objective(inst.s, solution.beta + delta.head(4), solution.bias + delta[4], inst.y,
                                                inst.u, inst.lambda);
        EXPECT_LE(best, probed + 1e-12);
    }
}

TEST(Solve, WarmStartKeepsFixedPoint) {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 10; ++k) {
        const Instance inst = random_instance(rng, 30, 4, 3, 1e-4);
        const BetaSystem system = assemble(inst.s, inst.u, inst.y, inst.lambda);
        const BetaSolution cold = solve(system);
        const BetaSolution warm = solve(system, Vector(oracle::random_vector(5, rng)));
        EXPECT_LT((cold.beta - warm.beta).norm(), 1e-8 * std::max(1.0, cold.beta.norm()));
        EXPECT_NEAR(cold.bias, warm.bias, 1e-8 * std::max(1.0, std::abs(cold.bias)));
    }
}

TEST(Solve, DuplicatePrototypesAreJittered) {
    Matrix x(6, 1);
    x << 0, 1, 2, 3, 4, 5;
    Matrix z(2, 1);
    z << 2, 2;
    const Eigen::MatrixXd s = oracle::rbf_matrix(x, z, 0.5);
    const BetaSolution solution = solve_coefficients(s, Vector::Ones(6), x.col(0), 0.0);
    EXPECT_GT(solution.jitter, 0.0);
    EXPECT_TRUE(solution.beta.allFinite());
    // The two identical columns share the weight evenly.
    EXPECT_NEAR(solution.beta[0], solution.beta[1], 1e-6 * std::abs(solution.beta[0]) + 1e-9);
}

TEST(Solve, HopelessSystemThrows) {
    // Zero pivot before the jitter; the jitter then cancels the last entry exactly.
    BetaSystem system;
    system.matrix = Eigen::MatrixXd::Zero(4, 4);
    system.matrix.diagonal() << 1.0, -1.0, 0.0, -1e-10;
    system.rhs = Vector::Ones(4);
    EXPECT_THROW(solve(system), SingularSystemError);
}
