// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "oracles.hpp"

#include <supersparse/experiments.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace supersparse;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string fmt(const char* format, auto... args) {
    char buffer[256];
    std::snprintf(buffer, sizeof buffer, format, args...);
    return buffer;
}

Outcome beta_step_oracle() {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const Index n = 5 + (k * 13) % 36;
        const Index m = 1 + k % 6;
        const Index d = 1 + k % 4;
        const double gamma = 1.0 / static_cast<double>(d);
        const double lambda = std::pow(10.0, -4.0 + k % 5);
        const Matrix x = oracle::random_matrix(n, d, rng);
        const Vector y = oracle::random_vector(n, rng);
        const Vector u = oracle::random_weights(n, rng);
        const Matrix z = oracle::random_matrix(m, d, rng);
        const BetaSolution got = solve_coefficients(sim_matrix(Similarity::rbf(gamma), x, z), u, y, lambda);
        const oracle::Coefficients want = oracle::normal_equations(oracle::rbf_matrix(x, z, gamma), u, y, lambda);
        Vector a(m + 1), b(m + 1);
        a << got.beta, got.bias;
        b << want.beta, want.bias;
        worst = std::max(worst, (a - b).norm() / std::max(b.norm(), 1e-300));
    }
    return {worst <= 1e-8, fmt("worst relative difference %.3g over 50 instances", worst)};
}

Outcome gradient_check() {
    std::mt19937_64 rng(202);
    int bad = 0;
    double worst = 0.0;
    for (int k = 0; k < 25; ++k) {
        const Index n = 8 + (k * 7) % 33;
        const Index d = 1 + k % 5;
        const Index m = 1 + k % 4;
        const double gamma = 1.0 / static_cast<double>(d);
        const double lambda = k % 2 == 0 ? 1e-2 : 1e-4;
        const Matrix x = oracle::random_matrix(n, d, rng);
        const Dataset data(x, oracle::random_vector(n, rng), oracle::random_weights(n, rng));
        const Matrix z = oracle::random_matrix(m, d, rng);
        const Similarity sim = Similarity::rbf(gamma);
        const BetaSolution c = solve_coefficients(sim_matrix(sim, x, z), data.weights(), data.targets(), lambda);
        const SparseModel model(z, c.beta, c.bias, sim);
        const Index j = k % m;
        const ZGradient g = grad_total(data, model, j, lambda, GradMode::analytic);
        const Vector fd = oracle::resolved_gradient(data, z, j, gamma, lambda, 1e-6);
        for (Index q = 0; q < d; ++q) {
            const double error = std::abs(g.grad[q] - fd[q]);
            const double tolerance = std::max(1e-4 * std::abs(fd[q]), 1e-8);
            worst = std::max(worst, error / tolerance);
            if (error > tolerance) ++bad;
        }
    }
    return {bad == 0, fmt("%d coordinates out of tolerance, worst error/tolerance %.3g", bad, worst)};
}

Outcome exact_minimizer() {
    std::vector<FitResult> runs;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        TrainConfig config = experiments::run_config(seed);
        config.max_sweeps = 20;
        runs.push_back(fit(io::gen_synthetic(io::SyntheticKind::two_gaussians, 25, seed), 1 + seed % 4, config));
        runs.push_back(fit(io::gen_synthetic(io::SyntheticKind::sine_regression, 60, seed), 5, config));
        runs.push_back(fit(io::gen_synthetic(io::SyntheticKind::three_clusters, 60, seed), 3, config));
    }
    int violations = 0;
    std::size_t steps = 0;
    for (const FitResult& run : runs) {
        const TrainTrace& trace = run.trace;
        if (trace.termination == Termination::error) ++violations;
        for (const IterationRecord& r : trace.records) {
            ++steps;
            if (!std::isfinite(r.omega) || !std::isfinite(r.omega_after_z)) ++violations;
            if (r.omega > r.omega_after_z + 1e-12 * std::max(1.0, std::abs(r.omega_after_z))) ++violations;
        }
        if (!(trace.final_objective() <= trace.initial_objective)) ++violations;
    }
    return {violations == 0, fmt("%d violations over %zu runs and %zu beta-steps", violations, runs.size(), steps)};
}

Outcome distillation(GradMode mode, double bar, int required) {
    int hits = 0;
    std::string agreements;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const double agreement = experiments::two_prototype_distillation(seed, mode).agreement;
        if (agreement >= bar) ++hits;
        agreements += fmt(" %.3f", agreement);
    }
    return {hits >= required, fmt("%d/10 seeds reach %.2f agreement (need %d); per seed:", hits, bar, required) +
                                  agreements};
}

Outcome cluster_selection() {
    int hits = 0;
    std::string chosen;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Index m = experiments::cluster_selection(seed).trace.chosen_m;
        if (m == 3) ++hits;
        chosen += " " + std::to_string(m);
    }
    return {hits >= 8, fmt("m*=3 in %d/10 seeds; chosen:", hits) + chosen};
}

Outcome sine_comparison() {
    std::vector<double> sparse, random;
    int lower = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const experiments::Comparison c = experiments::sine_comparison(seed);
        sparse.push_back(c.sparse_mae);
        random.push_back(c.random_mae);
        if (c.sparse_mae < c.random_mae) ++lower;
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    const double mr = mean(random);
    double var = 0.0;
    for (double x : random) var += (x - mr) * (x - mr);
    const double se = std::sqrt(var / static_cast<double>(random.size() - 1) / static_cast<double>(random.size()));
    const double ms = mean(sparse);
    return {ms <= mr + se && lower >= 6,
            fmt("mean MAE %.4f vs random %.4f (SE %.4f); strictly lower in %d/10 seeds", ms, mr, se, lower)};
}

Outcome evaluation_cost() {
    std::mt19937_64 rng(303);
    std::string detail;
    bool ok = true;
    for (Index m : {1, 2, 5, 10}) {
        std::uint64_t calls = 0;
        const Similarity counted = Similarity::blackbox("counted-rbf", [&calls](std::span<const double> a,
                                                                               std::span<const double> b) {
            ++calls;
            double sq = 0.0;
            for (std::size_t k = 0; k < a.size(); ++k) sq += (a[k] - b[k]) * (a[k] - b[k]);
            return std::exp(-0.5 * sq);
        });
        const SparseModel model(oracle::random_matrix(m, 3, rng), oracle::random_vector(m, rng), 0.1, counted);
        const Vector x = oracle::random_vector(3, rng);
        predict(model, x);
        const std::uint64_t counted_calls = calls;
        const std::uint64_t cost = eval_cost(model);
        ok = ok && cost == static_cast<std::uint64_t>(m) && counted_calls == static_cast<std::uint64_t>(m);
        detail += fmt(" m=%d:%llu/%llu", static_cast<int>(m), static_cast<unsigned long long>(cost),
                      static_cast<unsigned long long>(counted_calls));
    }
    return {ok, "eval_cost/counted calls per prediction:" + detail};
}

Outcome penalty_efficacy() {
    std::vector<double> with, without;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        with.push_back(experiments::min_prototype_distance(experiments::four_prototype_fit(seed, true).model));
        without.push_back(experiments::min_prototype_distance(experiments::four_prototype_fit(seed, false).model));
    }
    const double a = median(with), b = median(without);
    return {a >= b, fmt("median minimum prototype distance %.4f with penalty, %.4f without", a, b)};
}

Outcome lasso_optimality() {
    const Similarity sim = Similarity::rbf(0.5);
    double worst_kkt = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(400 + seed);
        const Index n = 30;
        const Matrix x = oracle::random_matrix(n, 2, rng, 1.5);
        Vector y(n);
        for (Index i = 0; i < n; ++i) y[i] = std::sin(x(i, 0)) + 0.5 * x(i, 1);
        const Dataset data(x, y, oracle::random_weights(n, rng));
        for (double fraction : {0.5, 0.1, 0.02}) {
            const double lambda1 = fraction * lasso_lambda_max(data, sim);
            const LassoResult result = lasso_similarity(data, lambda1, sim);
            const Eigen::MatrixXd s = oracle::rbf_matrix(x, gather_rows(x, result.candidates), 0.5);
            Vector r = y - s * result.coefficients;
            r.array() -= result.bias;
            const Vector g = s.transpose() * data.weights().cwiseProduct(r);
            worst_kkt = std::max(worst_kkt, std::abs(data.weights().dot(r)));
            for (Index j = 0; j < g.size(); ++j) {
                const double beta = result.coefficients[j];
                worst_kkt = std::max(worst_kkt, beta == 0.0 ? std::max(0.0, std::abs(g[j]) - lambda1)
                                                            : std::abs(g[j] - lambda1 * (beta > 0 ? 1.0 : -1.0)));
            }
        }
    }

    std::mt19937_64 rng(499);
    const Matrix x = oracle::random_matrix(30, 2, rng, 1.5);
    const Dataset data(x, oracle::random_vector(30, rng), oracle::random_weights(30, rng));
    const std::vector<Index> candidates{0, 5, 10, 15, 20, 25};
    LassoOptions options;
    options.tolerance = 1e-10;
    options.max_sweeps = 100000;
    const LassoResult result = lasso_similarity(data, 0.0, sim, candidates, options);
    const oracle::Coefficients ls = oracle::normal_equations(oracle::rbf_matrix(x, gather_rows(x, candidates), 0.5),
                                                             data.weights(), data.targets(), 0.0);
    const double ls_error =
        std::max((result.coefficients - ls.beta).cwiseAbs().maxCoeff(), std::abs(result.bias - ls.bias));
    return {worst_kkt <= 1e-6 && ls_error <= 1e-6,
            fmt("worst subgradient residual %.3g; lambda1=0 distance to least squares %.3g", worst_kkt, ls_error)};
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;  // <= 0 means no runtime bound
    std::function<Outcome()> check;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "beta-step matches normal equations", 1.0, beta_step_oracle},
        {2, "total gradient matches finite differences", 5.0, gradient_check},
        {3, "beta-step never increases the objective", 0.0, exact_minimizer},
        {4, "two-prototype distillation agreement", 10.0, [] { return distillation(GradMode::analytic, 0.95, 8); }},
        {5, "incremental CV selects three prototypes", 30.0, cluster_selection},
        {6, "learned prototypes beat random selection", 0.0, sine_comparison},
        {7, "evaluation cost equals m", 0.0, evaluation_cost},
        {8, "separation penalty spreads prototypes", 0.0, penalty_efficacy},
        {9, "LASSO optimality", 0.0, lasso_optimality},
        {10, "distillation with approximate gradients", 0.0,
         [] { return distillation(GradMode::approximate, 0.90, 7); }},
    };
    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome outcome;
        try {
            outcome = c.check();
        } catch (const std::exception& e) {
            outcome = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        bool pass = outcome.pass;
        if (c.budget_seconds > 0.0 && seconds >= c.budget_seconds) {
            pass = false;
            outcome.detail += fmt(" [runtime %.2f s exceeds %.0f s]", seconds, c.budget_seconds);
        }
        if (!pass) ++failures;
        std::printf("%s criterion %d (%s): %s (%.2f s)\n", pass ? "PASS" : "FAIL", c.id, c.name,
                    outcome.detail.c_str(), seconds);
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
