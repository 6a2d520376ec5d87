#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace supersparse {

// Rows of a feature or prototype matrix are samples; row-major keeps them contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using VectorRef = Eigen::Ref<const Eigen::VectorXd>;
using Index = Eigen::Index;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad argument, violated precondition, or inconsistent dimensions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A similarity evaluation failed or produced a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

class UnsupportedMode : public Error {
public:
    using Error::Error;
};

class SingularSystemError : public Error {
public:
    using Error::Error;
};

/// Raised when an operation is called on state that does not satisfy its contract
/// (e.g. coefficients that are stale with respect to the prototypes).
class ContractViolation : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

/// Deterministic generator for a (seed, stream) pair. Independent streams are
/// used for CV folds, restarts and jitter so results never depend on call order.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& values) {
    return values.allFinite();
}

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        throw InvalidArgument(message);
    }
}

}  // namespace supersparse
