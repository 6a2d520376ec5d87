#pragma once

#include "beta_solver.hpp"
#include "common.hpp"
#include "core_types.hpp"
#include "similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace supersparse {

enum class SelectionKind { random, border, spanning, kmedians };

inline std::string_view to_string(SelectionKind kind) {
    switch (kind) {
        case SelectionKind::random: return "random";
        case SelectionKind::border: return "border";
        case SelectionKind::spanning: return "spanning";
        case SelectionKind::kmedians: return "kmedians";
    }
    return "unknown";
}

struct SelectionMethod {
    SelectionKind kind = SelectionKind::random;
    Index m = 1;
    std::uint64_t seed = 0;
};

namespace detail {

inline void check_selection_size(const Dataset& data, Index m, std::string_view method) {
    if (m < 1 || m > data.size()) {
        throw InvalidArgument(std::string(method) + ": m must be in [1, " + std::to_string(data.size()) + "], got " +
                              std::to_string(m));
    }
}

inline double distance(const Matrix& x, Index a, Index b) { return (x.row(a) - x.row(b)).norm(); }

}  // namespace detail

/// Member of `members` minimizing the summed Euclidean distance to all members (lowest index on ties).
inline Index set_median(const Matrix& features, const std::vector<Index>& members) {
    require(!members.empty(), "set_median: empty set");
    Index best = members.front();
    double best_sum = std::numeric_limits<double>::infinity();
    for (Index candidate : members) {
        double sum = 0.0;
        for (Index other : members) sum += detail::distance(features, candidate, other);
        if (sum < best_sum) {
            best_sum = sum;
            best = candidate;
        }
    }
    return best;
}

inline Index set_median(const Matrix& features) {
    std::vector<Index> all(static_cast<std::size_t>(features.rows()));
    std::iota(all.begin(), all.end(), Index{0});
    return set_median(features, all);
}

/// PS-R: uniform without replacement.
inline std::vector<Index> ps_random(const Dataset& data, Index m, std::uint64_t seed) {
    detail::check_selection_size(data, m, "ps_random");
    std::vector<Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Index{0});
    auto rng = make_rng(seed, 0x5e1ecULL);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(m));
    return order;
}

/// PS-B: samples farthest from the set median of the training data, farthest first.
inline std::vector<Index> ps_border(const Dataset& data, Index m) {
    detail::check_selection_size(data, m, "ps_border");
    const Matrix& x = data.features();
    const Index median = set_median(x);
    std::vector<Index> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), Index{0});
    std::vector<double> dist(order.size());
    for (Index i = 0; i < data.size(); ++i) dist[static_cast<std::size_t>(i)] = detail::distance(x, i, median);
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return dist[static_cast<std::size_t>(a)] > dist[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(m));
    return order;
}

/// PS-S: set median first, then farthest-point traversal.
inline std::vector<Index> ps_spanning(const Dataset& data, Index m) {
    detail::check_selection_size(data, m, "ps_spanning");
    const Matrix& x = data.features();
    const auto n = static_cast<std::size_t>(data.size());
    std::vector<Index> selected{set_median(x)};
    std::vector<bool> taken(n, false);
    taken[static_cast<std::size_t>(selected.front())] = true;
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (static_cast<Index>(selected.size()) < m) {
        const Index last = selected.back();
        Index best = -1;
        double best_distance = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            nearest[i] = std::min(nearest[i], detail::distance(x, static_cast<Index>(i), last));
            if (nearest[i] > best_distance) {
                best_distance = nearest[i];
                best = static_cast<Index>(i);
            }
        }
        taken[static_cast<std::size_t>(best)] = true;
        selected.push_back(best);
    }
    return selected;
}

struct KMeansResult {
    Matrix centers;
    std::vector<Index> assignment;
    double inertia = 0.0;
};

/**
 * Lloyd's k-means from k distinct random samples, best inertia over restarts.
 *
 * A cluster that empties out is re-seeded with the point farthest from its own
 * center (taken from a cluster with more than one member), so every returned
 * cluster is non-empty.
 */
inline KMeansResult kmeans(const Matrix& x, Index k, std::uint64_t seed, int max_iterations = 50, int restarts = 5) {
    const Index n = x.rows();
    require(k >= 1 && k <= n, "kmeans: k must be in [1, n]");
    KMeansResult best;
    best.inertia = std::numeric_limits<double>::infinity();

    for (int restart = 0; restart < restarts; ++restart) {
        auto rng = make_rng(seed, 0x4b3e0000ULL + static_cast<std::uint64_t>(restart));
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::shuffle(order.begin(), order.end(), rng);
        Matrix centers(k, x.cols());
        for (Index c = 0; c < k; ++c) centers.row(c) = x.row(order[static_cast<std::size_t>(c)]);

        std::vector<Index> assignment(static_cast<std::size_t>(n), -1);
        std::vector<double> sq(static_cast<std::size_t>(n), 0.0);

        auto assign = [&]() {
            bool changed = false;
            for (Index i = 0; i < n; ++i) {
                Index best_c = 0;
                double best_d = std::numeric_limits<double>::infinity();
                for (Index c = 0; c < k; ++c) {
                    const double dist = (x.row(i) - centers.row(c)).squaredNorm();
                    if (dist < best_d) {
                        best_d = dist;
                        best_c = c;
                    }
                }
                if (assignment[static_cast<std::size_t>(i)] != best_c) changed = true;
                assignment[static_cast<std::size_t>(i)] = best_c;
                sq[static_cast<std::size_t>(i)] = best_d;
            }
            // Re-seed empty clusters.
            std::vector<Index> counts(static_cast<std::size_t>(k), 0);
            for (Index c : assignment) ++counts[static_cast<std::size_t>(c)];
            for (Index c = 0; c < k; ++c) {
                if (counts[static_cast<std::size_t>(c)] > 0) continue;
                Index donor = -1;
                double donor_d = -1.0;
                for (Index i = 0; i < n; ++i) {
                    const Index owner = assignment[static_cast<std::size_t>(i)];
                    if (counts[static_cast<std::size_t>(owner)] > 1 && sq[static_cast<std::size_t>(i)] > donor_d) {
                        donor_d = sq[static_cast<std::size_t>(i)];
                        donor = i;
                    }
                }
                --counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(donor)])];
                assignment[static_cast<std::size_t>(donor)] = c;
                ++counts[static_cast<std::size_t>(c)];
                sq[static_cast<std::size_t>(donor)] = 0.0;
                centers.row(c) = x.row(donor);
                changed = true;
            }
            return changed;
        };

        auto update = [&]() {
            centers.setZero();
            std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
            for (Index i = 0; i < n; ++i) {
                const Index c = assignment[static_cast<std::size_t>(i)];
                centers.row(c) += x.row(i);
                counts[static_cast<std::size_t>(c)] += 1.0;
            }
            for (Index c = 0; c < k; ++c) centers.row(c) /= counts[static_cast<std::size_t>(c)];
        };

        for (int iteration = 0; iteration < max_iterations; ++iteration) {
            if (!assign() && iteration > 0) break;
            update();
        }
        assign();
        update();
        double inertia = 0.0;
        for (Index i = 0; i < n; ++i) {
            inertia += (x.row(i) - centers.row(assignment[static_cast<std::size_t>(i)])).squaredNorm();
        }
        if (inertia < best.inertia) {
            best.centers = centers;
            best.assignment = assignment;
            best.inertia = inertia;
        }
    }
    return best;
}

/// PS-KM: k-means with k = m, then the set median of each cluster.
inline std::vector<Index> ps_kmedians(const Dataset& data, Index m, std::uint64_t seed) {
    detail::check_selection_size(data, m, "ps_kmedians");
    const KMeansResult clusters = kmeans(data.features(), m, seed);
    std::vector<std::vector<Index>> members(static_cast<std::size_t>(m));
    for (Index i = 0; i < data.size(); ++i) {
        members[static_cast<std::size_t>(clusters.assignment[static_cast<std::size_t>(i)])].push_back(i);
    }
    std::vector<Index> selected;
    selected.reserve(static_cast<std::size_t>(m));
    for (const auto& cluster : members) selected.push_back(set_median(data.features(), cluster));
    return selected;
}

inline std::vector<Index> select_prototypes(const Dataset& data, const SelectionMethod& method) {
    switch (method.kind) {
        case SelectionKind::random: return ps_random(data, method.m, method.seed);
        case SelectionKind::border: return ps_border(data, method.m);
        case SelectionKind::spanning: return ps_spanning(data, method.m);
        case SelectionKind::kmedians: return ps_kmedians(data, method.m, method.seed);
    }
    throw InvalidArgument("unknown selection method");
}

inline Matrix gather_rows(const Matrix& features, const std::vector<Index>& rows) {
    Matrix out(static_cast<Index>(rows.size()), features.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = features.row(rows[k]);
    return out;
}

/// Coefficients solved for fixed prototypes; the prototypes are never moved.
inline SparseModel fixed_prototype_model(const Dataset& data, Matrix prototypes, double lambda,
                                         const Similarity& similarity) {
    const SimilarityMatrix s = sim_matrix(similarity, data.features(), prototypes);
    const BetaSolution solution = solve_coefficients(s, data.weights(), data.targets(), lambda);
    TrainingInfo info;
    info.lambda = lambda;
    info.objective = objective(s, solution.beta, solution.bias, data, lambda).total;
    info.n_train = data.size();
    return SparseModel(std::move(prototypes), solution.beta, solution.bias, similarity, info);
}

/// Ridge regression in the similarity space spanned by every training sample.
inline SparseModel kernel_ridge_full(const Dataset& data, double lambda, const Similarity& similarity) {
    return fixed_prototype_model(data, data.features(), lambda, similarity);
}

/// Select prototypes with `method`, freeze them, and run the beta-step only.
inline SparseModel baseline_pipeline(const Dataset& data, const SelectionMethod& method, double lambda,
                                     const Similarity& similarity) {
    const std::vector<Index> rows = select_prototypes(data, method);
    SparseModel model = fixed_prototype_model(data, gather_rows(data.features(), rows), lambda, similarity);
    TrainingInfo info = model.info();
    info.seed = method.seed;
    return model.with_info(info);
}

struct LassoResult {
    SparseModel model;            // nonzero-coefficient prototypes only
    Vector coefficients;          // one per candidate
    double bias = 0.0;
    std::vector<Index> candidates;
    std::vector<Index> support;   // indices into `candidates`
    int sweeps = 0;
    double kkt_residual = 0.0;
};

struct LassoOptions {
    double tolerance = 1e-6;
    int max_sweeps = 10000;  // full passes
};

/**
 * Weighted LASSO in the similarity space,
 *
 *   min_{beta, b}  1/2 sum_i u_i (y_i - b - s_i' beta)^2 + lambda1 ||beta||_1,
 *
 * by cyclic coordinate descent with soft-thresholding and an unpenalized
 * intercept; each full pass is followed by passes over the nonzero
 * coefficients only (at most 1000 of those per full pass). Candidates default to every training row. Terminates when every
 * coordinate's subgradient optimality residual is <= tolerance.
 *
 * If all coefficients are zero the returned model keeps one prototype with
 * zero weight, since a model needs at least one.
 */
inline LassoResult lasso_similarity(const Dataset& data, double lambda1, const Similarity& similarity,
                                    std::optional<std::vector<Index>> candidate_rows = std::nullopt,
                                    const LassoOptions& options = {}) {
    require(std::isfinite(lambda1) && lambda1 >= 0.0, "lasso: lambda1 must be >= 0");
    std::vector<Index> candidates;
    if (candidate_rows) {
        candidates = *candidate_rows;
        require(!candidates.empty(), "lasso: empty candidate set");
    } else {
        candidates.resize(static_cast<std::size_t>(data.size()));
        std::iota(candidates.begin(), candidates.end(), Index{0});
    }
    const Matrix protos = gather_rows(data.features(), candidates);
    const SimilarityMatrix s = sim_matrix(similarity, data.features(), protos);
    const Vector& u = data.weights();
    const Vector& y = data.targets();
    const Index p = s.cols();
    const double total_weight = u.sum();

    const Vector column_norms = (s.array().square().colwise() * u.array()).colwise().sum().transpose();
    Vector beta = Vector::Zero(p);
    double bias = u.dot(y) / total_weight;
    Vector residual = y.array() - bias;

    auto soft = [](double value, double threshold) {
        if (value > threshold) return value - threshold;
        if (value < -threshold) return value + threshold;
        return 0.0;
    };

    auto kkt = [&](const Vector& r) {
        const Vector gradient = s.transpose() * u.cwiseProduct(r);
        double worst = std::abs(u.dot(r));
        for (Index j = 0; j < p; ++j) {
            double violation = 0.0;
            if (beta[j] != 0.0) {
                violation = std::abs(gradient[j] - lambda1 * (beta[j] > 0.0 ? 1.0 : -1.0));
            } else if (column_norms[j] > 0.0) {
                violation = std::max(0.0, std::abs(gradient[j]) - lambda1);
            }
            worst = std::max(worst, violation);
        }
        return worst;
    };

    // One coordinate pass over `columns` (all when empty) plus the intercept; returns the largest scaled move.
    auto pass = [&](const std::vector<Index>& columns) {
        double largest = 0.0;
        auto update = [&](Index j) {
            if (column_norms[j] <= 0.0) return;
            const double rho = s.col(j).dot(u.cwiseProduct(residual)) + column_norms[j] * beta[j];
            const double updated = soft(rho, lambda1) / column_norms[j];
            const double delta = updated - beta[j];
            if (delta != 0.0) {
                residual -= delta * s.col(j);
                beta[j] = updated;
                largest = std::max(largest, std::abs(delta) * column_norms[j]);
            }
        };
        if (columns.empty()) {
            for (Index j = 0; j < p; ++j) update(j);
        } else {
            for (Index j : columns) update(j);
        }
        const double shift = u.dot(residual) / total_weight;
        bias += shift;
        residual.array() -= shift;
        return largest;
    };

    int sweeps = 0;
    double violation = std::numeric_limits<double>::infinity();
    while (sweeps < options.max_sweeps) {
        ++sweeps;
        pass({});
        // Settle the active set before the next full pass.
        std::vector<Index> active;
        for (Index j = 0; j < p; ++j) {
            if (beta[j] != 0.0) active.push_back(j);
        }
        if (!active.empty()) {
            for (int inner = 0; inner < 1000; ++inner) {
                if (pass(active) <= 1e-3 * options.tolerance) break;
            }
        }

        // Fresh residual for the optimality check; the running one drifts.
        residual = y - s * beta;
        residual.array() -= bias;
        violation = kkt(residual);
        if (violation <= options.tolerance) break;
    }
    if (!(violation <= options.tolerance)) {
        throw Error("lasso: no convergence after " + std::to_string(sweeps) +
                    " sweeps; subgradient residual " + std::to_string(violation));
    }

    LassoResult result{SparseModel(protos.topRows(1), Vector::Zero(1), bias, similarity), beta, bias, candidates,
                       {}, sweeps, violation};
    for (Index j = 0; j < p; ++j) {
        if (beta[j] != 0.0) result.support.push_back(j);
    }
    TrainingInfo info;
    info.lambda = lambda1;
    info.iterations = sweeps;
    info.n_train = data.size();
    if (result.support.empty()) {
        Index strongest = 0;
        const Vector gradient = s.transpose() * u.cwiseProduct(residual);
        gradient.cwiseAbs().maxCoeff(&strongest);
        result.model = SparseModel(protos.row(strongest), Vector::Zero(1), bias, similarity, info);
    } else {
        Vector kept(static_cast<Index>(result.support.size()));
        std::vector<Index> kept_rows;
        for (std::size_t k = 0; k < result.support.size(); ++k) {
            kept[static_cast<Index>(k)] = beta[result.support[k]];
            kept_rows.push_back(candidates[static_cast<std::size_t>(result.support[k])]);
        }
        result.model = SparseModel(gather_rows(data.features(), kept_rows), kept, bias, similarity, info);
    }
    return result;
}

/// Smallest lambda1 at which every LASSO coefficient is zero.
inline double lasso_lambda_max(const Dataset& data, const Similarity& similarity,
                               std::optional<std::vector<Index>> candidate_rows = std::nullopt) {
    std::vector<Index> candidates;
    if (candidate_rows) {
        candidates = *candidate_rows;
    } else {
        candidates.resize(static_cast<std::size_t>(data.size()));
        std::iota(candidates.begin(), candidates.end(), Index{0});
    }
    const SimilarityMatrix s = sim_matrix(similarity, data.features(), gather_rows(data.features(), candidates));
    const Vector& u = data.weights();
    const double mean = u.dot(data.targets()) / u.sum();
    const Vector centered = data.targets().array() - mean;
    return (s.transpose() * u.cwiseProduct(centered)).cwiseAbs().maxCoeff();
}

/**
 * LASSO with at most `m` nonzero coefficients: geometric bisection on lambda1
 * between lambda_max * 1e-6 and lambda_max, keeping the smallest penalty whose
 * support fits. Trial solves get `trial_sweeps` full passes; one that does not
 * converge counts as too small. The support is not monotone in lambda1 in
 * general, so the result can hold fewer than m prototypes.
 */
inline LassoResult lasso_with_budget(const Dataset& data, Index m, const Similarity& similarity, int steps = 30,
                                     int trial_sweeps = 200) {
    detail::check_selection_size(data, m, "lasso_with_budget");
    const double top = lasso_lambda_max(data, similarity);
    double hi = top;
    double lo = top * 1e-6;
    LassoOptions trial_options;
    trial_options.max_sweeps = trial_sweeps;
    LassoResult best = lasso_similarity(data, hi, similarity);
    for (int k = 0; k < steps; ++k) {
        const double mid = std::sqrt(lo * hi);
        std::optional<LassoResult> trial;
        try {
            trial = lasso_similarity(data, mid, similarity, std::nullopt, trial_options);
        } catch (const Error&) {
        }
        if (trial && static_cast<Index>(trial->support.size()) <= m) {
            hi = mid;
            best = std::move(*trial);
        } else {
            lo = mid;
        }
    }
    return best;
}

}  // namespace supersparse
