#pragma once

#include "baselines.hpp"
#include "common.hpp"
#include "core_types.hpp"
#include "dataio.hpp"
#include "metrics.hpp"
#include "model_selection.hpp"
#include "trainer.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

// Desk-scale experiments shared by the acceptance runner and `supersparse bench`.
namespace supersparse::experiments {

/// Sweep cap used by every experiment; runs are meant to stop on the epsilon test.
inline constexpr int kSweeps = 500;
inline constexpr double kTeacherLambda = 10.0;
inline constexpr double kClusterLambda = 1e-2;
inline constexpr int kGridResolution = 100;
inline constexpr std::uint64_t kTestSeedOffset = 1000;

inline TrainConfig run_config(std::uint64_t seed) {
    TrainConfig config;
    config.seed = seed;
    config.max_sweeps = kSweeps;
    return config;
}

/// Fraction of a resolution x resolution grid over the bounding box of `features` where both models agree in sign.
inline double sign_agreement(const SparseModel& a, const SparseModel& b, const Matrix& features,
                             int resolution = kGridResolution) {
    require(features.cols() == 2, "sign_agreement: grid evaluation needs 2-D features");
    require(resolution >= 2, "sign_agreement: resolution must be >= 2");
    const Vector lo = features.colwise().minCoeff().transpose();
    const Vector hi = features.colwise().maxCoeff().transpose();
    Index agree = 0;
    Vector point(2);
    for (int i = 0; i < resolution; ++i) {
        for (int k = 0; k < resolution; ++k) {
            point[0] = lo[0] + (hi[0] - lo[0]) * i / (resolution - 1);
            point[1] = lo[1] + (hi[1] - lo[1]) * k / (resolution - 1);
            if ((predict(a, point) >= 0.0) == (predict(b, point) >= 0.0)) ++agree;
        }
    }
    return static_cast<double>(agree) / static_cast<double>(resolution * resolution);
}

inline double min_prototype_distance(const SparseModel& model) {
    double best = std::numeric_limits<double>::infinity();
    const Matrix& z = model.prototypes();
    for (Index i = 0; i < z.rows(); ++i) {
        for (Index k = i + 1; k < z.rows(); ++k) best = std::min(best, (z.row(i) - z.row(k)).norm());
    }
    return best;
}

struct DistillRun {
    SparseModel teacher;
    FitResult student;
    double agreement = 0.0;
};

/// Two 2-D Gaussian classes (n = 25), full kernel ridge teacher, two-prototype student.
inline DistillRun two_prototype_distillation(std::uint64_t seed, GradMode mode = GradMode::analytic) {
    const Dataset data = io::gen_synthetic(io::SyntheticKind::two_gaussians, 25, seed);
    const Similarity similarity = Similarity::rbf(default_gamma(data.dimension()));
    SparseModel teacher = kernel_ridge_full(data, kTeacherLambda, similarity);
    const Vector scores = predict_batch(teacher, data.features());
    TrainConfig config = run_config(seed);
    config.grad_mode = mode;
    FitResult student = distill_with_trace(data.features(), scores, 2, config, similarity);
    const double agreement = sign_agreement(teacher, student.model, data.features());
    return DistillRun{std::move(teacher), std::move(student), agreement};
}

/// Incremental CV over m = 10, 5, 4, 3, 2 on the three-cluster set with MSE and rho = 1e-3.
inline SelectionResult cluster_selection(std::uint64_t seed) {
    const Dataset data = io::gen_synthetic(io::SyntheticKind::three_clusters, 120, seed);
    GridConfig grid;
    grid.grid = {10, 5, 4, 3, 2};
    grid.rho = 1e-3;
    grid.loss = LossKind::mse;
    TrainConfig config = run_config(seed);
    config.lambda = kClusterLambda;
    return select_m(data, grid, config);
}

struct Comparison {
    FitResult sparse;
    SparseModel random_selection;
    double sparse_mae = 0.0;
    double random_mae = 0.0;
};

/// Learned prototypes against randomly selected ones at equal m on the sine regression task.
inline Comparison sine_comparison(std::uint64_t seed, Index m = 5) {
    const Dataset train = io::gen_synthetic(io::SyntheticKind::sine_regression, 200, seed);
    const Dataset test = io::gen_synthetic(io::SyntheticKind::sine_regression, 200, seed + kTestSeedOffset);
    const Similarity similarity = Similarity::rbf(default_gamma(train.dimension()));
    const TrainConfig config = run_config(seed);
    FitResult sparse = fit(train, m, config, similarity);
    SparseModel random_selection =
        baseline_pipeline(train, SelectionMethod{SelectionKind::random, m, seed}, config.lambda, similarity);
    const double sparse_mae = mae(predict_batch(sparse.model, test.features()), test.targets());
    const double random_mae = mae(predict_batch(random_selection, test.features()), test.targets());
    return Comparison{std::move(sparse), std::move(random_selection), sparse_mae, random_mae};
}

/// Four prototypes on the two-Gaussian labels, with or without the separation penalty.
inline FitResult four_prototype_fit(std::uint64_t seed, bool penalty) {
    const Dataset data = io::gen_synthetic(io::SyntheticKind::two_gaussians, 25, seed);
    TrainConfig config = run_config(seed);
    config.penalty_enabled = penalty;
    return fit(data, 4, config);
}

}  // namespace supersparse::experiments
