#pragma once

#include "common.hpp"
#include "similarity.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace supersparse {

/**
 * Training samples with real-valued targets and positive per-sample weights.
 *
 * Targets may be regression values, +/-1 labels, or teacher scores. The
 * optional group ids drive subject-disjoint folding during model selection.
 */
class Dataset {
public:
    Dataset(Matrix features, Vector targets) : Dataset(std::move(features), std::move(targets), Vector{}) {}

    Dataset(Matrix features, Vector targets, Vector weights, std::vector<std::int64_t> groups = {})
        : features_(std::move(features)), targets_(std::move(targets)), weights_(std::move(weights)),
          groups_(std::move(groups)) {
        if (weights_.size() == 0) {
            weights_ = Vector::Ones(targets_.size());
        }
        require(features_.rows() >= 1, "dataset needs at least one sample");
        require(features_.cols() >= 1, "dataset needs at least one feature");
        require(targets_.size() == features_.rows(),
                "dataset has " + std::to_string(features_.rows()) + " rows but " +
                    std::to_string(targets_.size()) + " targets");
        require(weights_.size() == features_.rows(), "dataset weights length does not match sample count");
        require(groups_.empty() || static_cast<Index>(groups_.size()) == features_.rows(),
                "dataset group ids length does not match sample count");
        require(features_.allFinite(), "dataset features must be finite");
        require(targets_.allFinite(), "dataset targets must be finite");
        require(weights_.allFinite() && (weights_.array() > 0.0).all(), "dataset weights must be positive and finite");
    }

    /// Weights u_i = n / (2 n_c) for +/-1 labels, so both classes carry equal total mass.
    static Dataset class_balanced(Matrix features, Vector labels) {
        const Index n = labels.size();
        Index positives = 0;
        Index negatives = 0;
        for (Index i = 0; i < n; ++i) {
            if (labels[i] == 1.0) {
                ++positives;
            } else if (labels[i] == -1.0) {
                ++negatives;
            } else {
                throw InvalidArgument("class_balanced needs +/-1 labels; row " + std::to_string(i) + " has " +
                                      std::to_string(labels[i]));
            }
        }
        Vector weights(n);
        for (Index i = 0; i < n; ++i) {
            const Index count = labels[i] == 1.0 ? positives : negatives;
            weights[i] = static_cast<double>(n) / (2.0 * static_cast<double>(count));
        }
        return Dataset(std::move(features), std::move(labels), std::move(weights));
    }

    Index size() const { return features_.rows(); }
    Index dimension() const { return features_.cols(); }

    const Matrix& features() const { return features_; }
    const Vector& targets() const { return targets_; }
    const Vector& weights() const { return weights_; }
    const std::vector<std::int64_t>& groups() const { return groups_; }
    bool has_groups() const { return !groups_.empty(); }

    /// True when every target is exactly +1 or -1.
    bool is_binary_labeled() const {
        return (targets_.array() == 1.0 || targets_.array() == -1.0).all();
    }

    Dataset subset(const std::vector<Index>& rows) const {
        require(!rows.empty(), "subset needs at least one row");
        Matrix features(static_cast<Index>(rows.size()), dimension());
        Vector targets(static_cast<Index>(rows.size()));
        Vector weights(static_cast<Index>(rows.size()));
        std::vector<std::int64_t> groups;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const Index r = rows[k];
            require(r >= 0 && r < size(), "subset row index out of range");
            features.row(static_cast<Index>(k)) = features_.row(r);
            targets[static_cast<Index>(k)] = targets_[r];
            weights[static_cast<Index>(k)] = weights_[r];
            if (has_groups()) groups.push_back(groups_[static_cast<std::size_t>(r)]);
        }
        return Dataset(std::move(features), std::move(targets), std::move(weights), std::move(groups));
    }

    Dataset with_targets(Vector targets) const {
        return Dataset(features_, std::move(targets), weights_, groups_);
    }

private:
    Matrix features_;
    Vector targets_;
    Vector weights_;
    std::vector<std::int64_t> groups_;
};

/// Per-dimension projection bounds for the prototypes.
struct Box {
    Vector lo;
    Vector hi;

    static Box data_hull(const Matrix& features) {
        return Box{features.colwise().minCoeff().transpose(), features.colwise().maxCoeff().transpose()};
    }

    void validate(Index dimension) const {
        require(lo.size() == dimension && hi.size() == dimension, "box bounds must match the data dimension");
        require(lo.allFinite() && hi.allFinite(), "box bounds must be finite");
        require((lo.array() <= hi.array()).all(), "box lower bound exceeds upper bound");
    }

    Vector project(const VectorRef& z) const { return z.cwiseMax(lo).cwiseMin(hi); }
};

struct TrainConfig {
    double lambda = 1e-6;
    double eta = 0.5;
    double epsilon = 1e-8;
    int max_sweeps = 50;
    bool penalty_enabled = true;
    double penalty_decay_power = 2.0;
    std::optional<Box> box;
    /// Project onto [min, max] of the training features when no explicit box is given.
    bool project_to_data_hull = false;
    std::uint64_t seed = 0;
    GradMode grad_mode = GradMode::analytic;
    /// Divide the data-term step by the total sample weight, so eta is a step on the mean weighted loss.
    bool normalize_step = true;

    void validate() const {
        require(std::isfinite(lambda) && lambda >= 0.0, "lambda must be >= 0");
        require(std::isfinite(eta) && eta > 0.0, "eta must be > 0");
        require(std::isfinite(epsilon) && epsilon > 0.0, "epsilon must be > 0");
        require(max_sweeps >= 1, "max_sweeps must be >= 1");
        require(std::isfinite(penalty_decay_power), "penalty decay power must be finite");
        if (box) {
            require(box->lo.size() == box->hi.size(), "box bounds differ in length");
            require((box->lo.array() <= box->hi.array()).all(), "box lower bound exceeds upper bound");
        }
    }

    double effective_eta(const Vector& weights) const { return normalize_step ? eta / weights.sum() : eta; }

    /// The box actually used for data of this shape, if any.
    std::optional<Box> resolved_box(const Matrix& features) const {
        if (box) {
            box->validate(features.cols());
            return box;
        }
        if (project_to_data_hull) return Box::data_hull(features);
        return std::nullopt;
    }
};

struct TrainingInfo {
    double lambda = 0.0;
    std::int64_t iterations = 0;
    std::uint64_t seed = 0;
    double objective = 0.0;
    std::int64_t n_train = 0;
};

/// Prototypes z_1..z_m, coefficients beta, bias b and the similarity: everything needed at test time.
class SparseModel {
public:
    SparseModel(Matrix prototypes, Vector beta, double bias, Similarity similarity, TrainingInfo info = {})
        : prototypes_(std::move(prototypes)), beta_(std::move(beta)), bias_(bias),
          similarity_(std::move(similarity)), info_(info) {
        require(prototypes_.rows() >= 1, "a model needs at least one prototype");
        require(prototypes_.cols() >= 1, "prototypes need at least one dimension");
        require(beta_.size() == prototypes_.rows(), "beta length must equal the number of prototypes");
        require(prototypes_.allFinite(), "prototypes must be finite");
        require(beta_.allFinite() && std::isfinite(bias_), "coefficients must be finite");
    }

    Index size() const { return prototypes_.rows(); }
    Index dimension() const { return prototypes_.cols(); }
    const Matrix& prototypes() const { return prototypes_; }
    const Vector& beta() const { return beta_; }
    double bias() const { return bias_; }
    const Similarity& similarity() const { return similarity_; }
    const TrainingInfo& info() const { return info_; }

    SparseModel with_prototype(Index j, const VectorRef& z) const {
        require(j >= 0 && j < size(), "prototype index out of range");
        require(z.size() == dimension(), "prototype dimension mismatch");
        Matrix prototypes = prototypes_;
        prototypes.row(j) = z.transpose();
        return SparseModel(std::move(prototypes), beta_, bias_, similarity_, info_);
    }

    SparseModel with_coefficients(Vector beta, double bias) const {
        return SparseModel(prototypes_, std::move(beta), bias, similarity_, info_);
    }

    SparseModel with_info(TrainingInfo info) const {
        return SparseModel(prototypes_, beta_, bias_, similarity_, info);
    }

private:
    Matrix prototypes_;
    Vector beta_;
    double bias_;
    Similarity similarity_;
    TrainingInfo info_;
};

struct ObjectiveValue {
    double loss = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

/// g(x) = sum_j beta_j s(x, z_j) + b, using exactly m similarity evaluations.
inline double predict(const SparseModel& model, const VectorRef& x) {
    if (x.size() != model.dimension()) {
        throw InvalidArgument("predict: input has dimension " + std::to_string(x.size()) + " but model expects " +
                              std::to_string(model.dimension()));
    }
    double value = model.bias();
    for (Index j = 0; j < model.size(); ++j) {
        double s = 0.0;
        try {
            s = model.similarity()(x, model.prototypes().row(j).transpose());
        } catch (const EvaluationError& e) {
            throw EvaluationError("predict: prototype " + std::to_string(j) + ": " + e.what());
        }
        value += model.beta()[j] * s;
    }
    return value;
}

inline Vector predict_batch(const SparseModel& model, const Matrix& rows) {
    Vector out(rows.rows());
    for (Index i = 0; i < rows.rows(); ++i) {
        out[i] = predict(model, rows.row(i).transpose());
    }
    return out;
}

/// Objective given a precomputed n x m similarity matrix.
inline ObjectiveValue objective(const SimilarityMatrix& similarities, const VectorRef& beta, double bias,
                                const Dataset& data, double lambda) {
    require(similarities.rows() == data.size() && similarities.cols() == beta.size(),
            "objective: similarity matrix shape does not match data and coefficients");
    const Vector residual = (similarities * beta).array() + bias - data.targets().array();
    ObjectiveValue value;
    value.loss = residual.dot(data.weights().cwiseProduct(residual));
    value.reg = lambda * beta.squaredNorm();
    value.total = value.loss + value.reg;
    return value;
}

inline ObjectiveValue objective(const SparseModel& model, const Dataset& data, double lambda) {
    require(model.dimension() == data.dimension(), "objective: model and data dimensions differ");
    return objective(sim_matrix(model.similarity(), data.features(), model.prototypes()), model.beta(),
                     model.bias(), data, lambda);
}

}  // namespace supersparse
