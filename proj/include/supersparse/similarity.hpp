#pragma once

#include "common.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>

namespace supersparse {

enum class SimilarityKind { rbf, linear, blackbox };

enum class GradMode { analytic, approximate, numeric };

inline std::string_view to_string(SimilarityKind kind) {
    switch (kind) {
        case SimilarityKind::rbf: return "rbf";
        case SimilarityKind::linear: return "linear";
        case SimilarityKind::blackbox: return "blackbox";
    }
    return "unknown";
}

inline SimilarityKind similarity_kind_from_string(std::string_view name) {
    if (name == "rbf") return SimilarityKind::rbf;
    if (name == "linear") return SimilarityKind::linear;
    if (name == "blackbox") return SimilarityKind::blackbox;
    throw InvalidArgument("unknown similarity kind '" + std::string(name) + "'");
}

inline std::string_view to_string(GradMode mode) {
    switch (mode) {
        case GradMode::analytic: return "analytic";
        case GradMode::approximate: return "approximate";
        case GradMode::numeric: return "numeric";
    }
    return "unknown";
}

inline GradMode grad_mode_from_string(std::string_view name) {
    if (name == "analytic") return GradMode::analytic;
    if (name == "approximate") return GradMode::approximate;
    if (name == "numeric") return GradMode::numeric;
    throw InvalidArgument("unknown gradient mode '" + std::string(name) + "'");
}

struct SimilaritySpec {
    SimilarityKind kind = SimilarityKind::rbf;
    double gamma = 1.0;  // rbf only
    std::string blackbox_id;

    friend bool operator==(const SimilaritySpec&, const SimilaritySpec&) = default;
};

/// gamma = 1/d, the usual RBF width for d-dimensional inputs.
inline double default_gamma(Index dimension) {
    require(dimension >= 1, "dimension must be positive");
    return 1.0 / static_cast<double>(dimension);
}

/// Externally supplied symmetric scorer with no analytic form.
using Scorer = std::function<double(std::span<const double>, std::span<const double>)>;

/// n x m matrix with entry (i, j) = s(x_i, z_j).
using SimilarityMatrix = Eigen::MatrixXd;

/**
 * A similarity function together with an evaluation counter.
 *
 * Copies share the counter and, for black-box kinds, the scorer. Unless a
 * scorer is declared reentrant, calls into it are serialized.
 */
class Similarity {
public:
    Similarity() : Similarity(SimilaritySpec{}) {}

    static Similarity rbf(double gamma) {
        require(std::isfinite(gamma) && gamma > 0.0, "rbf gamma must be positive and finite");
        return Similarity(SimilaritySpec{SimilarityKind::rbf, gamma, {}});
    }

    static Similarity linear() { return Similarity(SimilaritySpec{SimilarityKind::linear, 1.0, {}}); }

    static Similarity blackbox(std::string id, Scorer scorer, bool reentrant = false) {
        require(static_cast<bool>(scorer), "black-box similarity needs a scorer");
        Similarity sim(SimilaritySpec{SimilarityKind::blackbox, 1.0, std::move(id)});
        sim.state_->scorer = std::move(scorer);
        sim.state_->reentrant = reentrant;
        return sim;
    }

    /// Rebuilds a similarity from its spec. Black-box specs come back without a
    /// scorer; evaluating them fails until bound with `bind`.
    static Similarity from_spec(const SimilaritySpec& spec) {
        switch (spec.kind) {
            case SimilarityKind::rbf: return rbf(spec.gamma);
            case SimilarityKind::linear: return linear();
            case SimilarityKind::blackbox: return Similarity(spec);
        }
        throw InvalidArgument("unknown similarity kind");
    }

    Similarity bind(Scorer scorer, bool reentrant = false) const {
        require(spec_.kind == SimilarityKind::blackbox, "only black-box similarities take a scorer");
        return blackbox(spec_.blackbox_id, std::move(scorer), reentrant);
    }

    const SimilaritySpec& spec() const { return spec_; }
    SimilarityKind kind() const { return spec_.kind; }

    double operator()(const VectorRef& a, const VectorRef& b) const {
        if (a.size() != b.size()) {
            throw InvalidArgument("similarity arguments differ in dimension: " + std::to_string(a.size()) +
                                  " vs " + std::to_string(b.size()));
        }
        state_->evaluations.fetch_add(1, std::memory_order_relaxed);
        double value = 0.0;
        switch (spec_.kind) {
            case SimilarityKind::rbf: value = rbf_value(a, b); break;
            case SimilarityKind::linear: value = a.dot(b); break;
            case SimilarityKind::blackbox: value = call_scorer(a, b); break;
        }
        if (!std::isfinite(value)) {
            throw EvaluationError("similarity returned a non-finite value");
        }
        return value;
    }

    std::uint64_t evaluations() const { return state_->evaluations.load(std::memory_order_relaxed); }

private:
    struct State {
        std::atomic<std::uint64_t> evaluations{0};
        Scorer scorer;
        bool reentrant = false;
        std::mutex mutex;
    };

    explicit Similarity(SimilaritySpec spec) : spec_(std::move(spec)), state_(std::make_shared<State>()) {}

    double rbf_value(const VectorRef& a, const VectorRef& b) const {
        return std::exp(-spec_.gamma * (a - b).squaredNorm());
    }

    double call_scorer(const VectorRef& a, const VectorRef& b) const {
        if (!state_->scorer) {
            throw EvaluationError("black-box similarity '" + spec_.blackbox_id + "' has no scorer bound");
        }
        std::span<const double> lhs(a.data(), static_cast<std::size_t>(a.size()));
        std::span<const double> rhs(b.data(), static_cast<std::size_t>(b.size()));
        try {
            if (state_->reentrant) {
                return state_->scorer(lhs, rhs);
            }
            std::lock_guard<std::mutex> lock(state_->mutex);
            return state_->scorer(lhs, rhs);
        } catch (const EvaluationError&) {
            throw;
        } catch (const std::exception& e) {
            throw EvaluationError("black-box scorer '" + spec_.blackbox_id + "' failed: " + e.what());
        }
    }

    friend Vector grad_z(const Similarity&, const VectorRef&, const VectorRef&, GradMode);

    SimilaritySpec spec_;
    std::shared_ptr<State> state_;
};

inline double eval(const Similarity& sim, const VectorRef& a, const VectorRef& b) { return sim(a, b); }

/// Finite-difference step used by GradMode::numeric.
inline double numeric_grad_step(const VectorRef& z) {
    return 1e-6 * std::max(1.0, z.size() > 0 ? z.cwiseAbs().maxCoeff() : 0.0);
}

/**
 * Gradient of s(x, z) with respect to the prototype argument z.
 *
 * analytic    - closed form (rbf: 2 gamma s(x,z) (x - z), linear: x)
 * approximate - s(x, z) (x - z), usable for any similarity
 * numeric     - central differences with step numeric_grad_step(z)
 */
inline Vector grad_z(const Similarity& sim, const VectorRef& x, const VectorRef& z, GradMode mode) {
    if (x.size() != z.size()) {
        throw InvalidArgument("grad_z arguments differ in dimension");
    }
    switch (mode) {
        case GradMode::analytic:
            switch (sim.kind()) {
                case SimilarityKind::rbf: {
                    const double gamma = sim.spec().gamma;
                    return (2.0 * gamma * sim.rbf_value(x, z)) * (x - z);
                }
                case SimilarityKind::linear: return x;
                case SimilarityKind::blackbox:
                    throw UnsupportedMode("analytic gradient is not available for black-box similarity '" +
                                          sim.spec().blackbox_id + "'");
            }
            break;
        case GradMode::approximate: return sim(x, z) * (x - z);
        case GradMode::numeric: {
            const double h = numeric_grad_step(z);
            Vector probe = z;
            Vector grad(z.size());
            for (Index k = 0; k < z.size(); ++k) {
                const double original = probe[k];
                probe[k] = original + h;
                const double forward = sim(x, probe);
                probe[k] = original - h;
                const double backward = sim(x, probe);
                probe[k] = original;
                grad[k] = (forward - backward) / (2.0 * h);
            }
            return grad;
        }
    }
    throw UnsupportedMode("unknown gradient mode");
}

/// Entry-wise similarity between every row and every prototype.
inline SimilarityMatrix sim_matrix(const Similarity& sim, const Matrix& rows, const Matrix& prototypes) {
    if (rows.cols() != prototypes.cols()) {
        throw InvalidArgument("sim_matrix: rows have dimension " + std::to_string(rows.cols()) +
                              " but prototypes have dimension " + std::to_string(prototypes.cols()));
    }
    SimilarityMatrix values(rows.rows(), prototypes.rows());
    for (Index i = 0; i < rows.rows(); ++i) {
        for (Index j = 0; j < prototypes.rows(); ++j) {
            try {
                values(i, j) = sim(rows.row(i).transpose(), prototypes.row(j).transpose());
            } catch (const EvaluationError& e) {
                throw EvaluationError("sim_matrix(" + std::to_string(i) + ", " + std::to_string(j) +
                                      "): " + e.what());
            }
        }
    }
    return values;
}

}  // namespace supersparse
