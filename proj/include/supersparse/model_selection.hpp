#pragma once

#include "beta_solver.hpp"
#include "common.hpp"
#include "core_types.hpp"
#include "metrics.hpp"
#include "trainer.hpp"

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

namespace supersparse {

enum class LossKind { mse, mae, error_rate };

inline std::string_view to_string(LossKind kind) {
    switch (kind) {
        case LossKind::mse: return "mse";
        case LossKind::mae: return "mae";
        case LossKind::error_rate: return "error_rate";
    }
    return "unknown";
}

inline LossKind loss_kind_from_string(std::string_view name) {
    if (name == "mse") return LossKind::mse;
    if (name == "mae") return LossKind::mae;
    if (name == "error_rate" || name == "error") return LossKind::error_rate;
    throw InvalidArgument("unknown loss '" + std::string(name) + "'");
}

/// Default trade-off weight: 0.1 for MAE, 1e-3 otherwise.
inline double default_rho(LossKind kind) { return kind == LossKind::mae ? 0.1 : 1e-3; }

/// {20, 10, 5, 4, 3, 2} capped at n/2: halve down to 5, then decrement to 2.
inline std::vector<Index> default_grid(Index n) {
    Index top = std::min<Index>(20, n / 2);
    std::vector<Index> grid;
    for (Index m = top; m >= 2;) {
        grid.push_back(m);
        m = m > 5 ? std::max<Index>(m / 2, 5) : m - 1;
    }
    if (grid.empty()) grid.push_back(1);
    return grid;
}

struct GridConfig {
    std::vector<Index> grid;  // strictly descending
    double rho = 1e-3;
    LossKind loss = LossKind::mse;
    int folds = 5;
    /// Fold by the dataset's group ids so each group lands in exactly one fold.
    bool group_folds = false;

    void validate() const {
        require(!grid.empty(), "grid must not be empty");
        require(grid.back() >= 1, "grid values must be >= 1");
        for (std::size_t k = 1; k < grid.size(); ++k) {
            require(grid[k] < grid[k - 1], "grid must be strictly descending");
        }
        require(std::isfinite(rho) && rho >= 0.0, "rho must be >= 0");
        require(folds >= 2, "folds must be >= 2");
    }
};

struct SelectionRecord {
    Index m = 0;
    double loss = 0.0;  // mean validation loss over folds
    double objective = 0.0;  // loss + rho * m
    bool chosen = false;
    std::vector<double> fold_losses;
    std::vector<std::vector<Index>> pruned;  // per fold: prototype positions removed to reach m
};

struct SelectionTrace {
    std::vector<SelectionRecord> records;
    Index chosen_m = 0;
    bool refit_on_all_data = true;
    std::vector<std::vector<Index>> final_pruned;  // per step of the all-data descent
};

struct SelectionResult {
    SparseModel model;
    SelectionTrace trace;
};

/// Independent seed for sub-run `stream` of a master seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    auto rng = make_rng(seed, 0xf01d0000ULL + stream);
    return rng();
}

/// Seeded partition of 0..n-1 into k folds whose sizes differ by at most one.
inline std::vector<std::vector<Index>> kfold_split(Index n, int k, std::uint64_t seed) {
    require(k >= 1, "kfold_split: k must be >= 1");
    if (k > n) {
        throw InvalidArgument("kfold_split: k = " + std::to_string(k) + " exceeds n = " + std::to_string(n));
    }
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    auto rng = make_rng(seed, 0xf01dULL);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < order.size(); ++i) folds[i % static_cast<std::size_t>(k)].push_back(order[i]);
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

/// Folds built from whole groups: shuffled groups go, largest first, to the currently smallest fold.
inline std::vector<std::vector<Index>> grouped_kfold_split(const std::vector<std::int64_t>& groups, int k,
                                                           std::uint64_t seed) {
    std::map<std::int64_t, std::vector<Index>> members;
    for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(static_cast<Index>(i));
    if (static_cast<std::size_t>(k) > members.size()) {
        throw InvalidArgument("grouped_kfold_split: k = " + std::to_string(k) + " exceeds the number of groups (" +
                              std::to_string(members.size()) + ")");
    }
    std::vector<std::vector<Index>> blocks;
    for (auto& [id, rows] : members) blocks.push_back(std::move(rows));
    auto rng = make_rng(seed, 0x6f01dULL);
    std::shuffle(blocks.begin(), blocks.end(), rng);
    std::stable_sort(blocks.begin(), blocks.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
    std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
    for (const auto& block : blocks) {
        auto smallest = std::min_element(folds.begin(), folds.end(),
                                         [](const auto& a, const auto& b) { return a.size() < b.size(); });
        smallest->insert(smallest->end(), block.begin(), block.end());
    }
    for (auto& fold : folds) std::sort(fold.begin(), fold.end());
    return folds;
}

inline double evaluate_loss(const SparseModel& model, const Dataset& data, LossKind kind) {
    const Vector pred = predict_batch(model, data.features());
    switch (kind) {
        case LossKind::mse: return mse(pred, data.targets());
        case LossKind::mae: return mae(pred, data.targets());
        case LossKind::error_rate: return error_rate(pred, data.targets());
    }
    throw InvalidArgument("unknown loss kind");
}

struct PruneResult {
    SparseModel model;
    std::vector<Index> removed;  // positions in the input model, ascending
};

/**
 * Keep the target_m prototypes with the largest |beta_j|, then re-solve the
 * coefficients on the survivors. Among equal |beta_j| the lowest index is
 * removed first. Survivors keep their relative order.
 */
inline PruneResult prune(const SparseModel& model, const Dataset& data, Index target_m, double lambda) {
    const Index m = model.size();
    if (target_m < 1 || target_m >= m) {
        throw InvalidArgument("prune: target_m must be in [1, " + std::to_string(m - 1) + "], got " +
                              std::to_string(target_m));
    }
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    const Vector magnitude = model.beta().cwiseAbs();
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return magnitude[a] < magnitude[b]; });

    std::vector<Index> removed(order.begin(), order.begin() + (m - target_m));
    std::sort(removed.begin(), removed.end());
    std::vector<bool> drop(static_cast<std::size_t>(m), false);
    for (Index r : removed) drop[static_cast<std::size_t>(r)] = true;

    Matrix kept(target_m, model.dimension());
    Index row = 0;
    for (Index j = 0; j < m; ++j) {
        if (!drop[static_cast<std::size_t>(j)]) kept.row(row++) = model.prototypes().row(j);
    }
    const SimilarityMatrix s = sim_matrix(model.similarity(), data.features(), kept);
    const BetaSolution solution = solve_coefficients(s, data.weights(), data.targets(), lambda);
    SparseModel pruned(std::move(kept), solution.beta, solution.bias, model.similarity(), model.info());
    return PruneResult{std::move(pruned), std::move(removed)};
}

namespace detail {

/// Fit at grid[0], then prune + warm-started refit down to each later grid value.
/// `visit(k, model)` is called for every grid index k reached, in order.
template <typename Visitor>
void descend_grid(const Dataset& train, const std::vector<Index>& grid, const TrainConfig& config,
                  const Similarity& similarity, std::vector<std::vector<Index>>* pruned, Visitor&& visit,
                  std::size_t stop_after = static_cast<std::size_t>(-1)) {
    SparseModel model = fit(train, grid.front(), config, similarity).model;
    if (pruned) pruned->push_back({});
    visit(std::size_t{0}, model);
    for (std::size_t k = 1; k < grid.size() && k <= stop_after; ++k) {
        PruneResult cut = prune(model, train, grid[k], config.lambda);
        if (pruned) pruned->push_back(cut.removed);
        model = fit_from(train, cut.model.prototypes(), config, similarity).model;
        visit(k, model);
    }
}

}  // namespace detail

/**
 * Incremental cross-validation over a descending grid of prototype counts.
 *
 * Each fold fits at m_1 and walks down the grid by pruning the smallest |beta|
 * prototypes and warm-starting the trainer from the survivors. The chosen m*
 * minimizes mean validation loss + rho * m (smaller m on ties); the returned
 * model repeats the same descent on all data down to m*.
 */
inline SelectionResult select_m(const Dataset& data, const GridConfig& grid_config, const TrainConfig& config,
                                const Similarity& similarity) {
    grid_config.validate();
    config.validate();
    const std::vector<Index>& grid = grid_config.grid;
    const Index n = data.size();
    const Index largest_training_fold = ((grid_config.folds - 1) * n) / grid_config.folds;
    if (grid.front() > largest_training_fold) {
        throw InvalidArgument("select_m: m_1 = " + std::to_string(grid.front()) + " exceeds the training fold size " +
                              std::to_string(largest_training_fold));
    }

    std::vector<std::vector<Index>> folds;
    if (grid_config.group_folds) {
        require(data.has_groups(), "select_m: group folding requested but the dataset has no group ids");
        folds = grouped_kfold_split(data.groups(), grid_config.folds, config.seed);
    } else {
        folds = kfold_split(n, grid_config.folds, config.seed);
    }

    SelectionTrace trace;
    trace.records.resize(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) trace.records[k].m = grid[k];

    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<bool> in_validation(static_cast<std::size_t>(n), false);
        for (Index i : folds[f]) in_validation[static_cast<std::size_t>(i)] = true;
        std::vector<Index> train_rows;
        for (Index i = 0; i < n; ++i) {
            if (!in_validation[static_cast<std::size_t>(i)]) train_rows.push_back(i);
        }
        if (train_rows.empty() || static_cast<Index>(train_rows.size()) < grid.front()) {
            throw InvalidArgument("select_m: fold " + std::to_string(f) + " leaves " +
                                  std::to_string(train_rows.size()) + " training samples, fewer than m_1 = " +
                                  std::to_string(grid.front()));
        }
        const Dataset train = data.subset(train_rows);
        const Dataset validation = data.subset(folds[f]);
        TrainConfig fold_config = config;
        fold_config.seed = derive_seed(config.seed, f);

        std::vector<std::vector<Index>> pruned;
        detail::descend_grid(train, grid, fold_config, similarity, &pruned, [&](std::size_t k, const SparseModel& m) {
            trace.records[k].fold_losses.push_back(evaluate_loss(m, validation, grid_config.loss));
        });
        for (std::size_t k = 0; k < grid.size(); ++k) trace.records[k].pruned.push_back(pruned[k]);
    }

    std::size_t best = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        SelectionRecord& record = trace.records[k];
        const auto& losses = record.fold_losses;
        record.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
        record.objective = record.loss + grid_config.rho * static_cast<double>(record.m);
        // Grid is descending, so <= prefers the smaller m on ties.
        if (record.objective <= trace.records[best].objective) best = k;
    }
    trace.records[best].chosen = true;
    trace.chosen_m = grid[best];

    std::optional<SparseModel> final_model;
    detail::descend_grid(
        data, grid, config, similarity, &trace.final_pruned,
        [&](std::size_t k, const SparseModel& m) {
            if (k == best) final_model = m;
        },
        best);
    return SelectionResult{std::move(*final_model), std::move(trace)};
}

inline SelectionResult select_m(const Dataset& data, const GridConfig& grid_config, const TrainConfig& config) {
    return select_m(data, grid_config, config, Similarity::rbf(default_gamma(data.dimension())));
}

}  // namespace supersparse
