#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace merton {

/// Upper bound on the number of risky assets. Fixed capacity keeps the
/// per-step vector algebra in the path loops off the heap.
inline constexpr int kMaxAssets = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAssets, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxAssets, kMaxAssets>;

/// Stop threshold used when a policy is not explicitly K-stopped.
inline constexpr double kDefaultStopThreshold = 1.0e6;

/// A wealth value left the utility's domain (carries the offending path).
class DomainError : public std::domain_error {
public:
    DomainError(const std::string& what, long path = -1)
        : std::domain_error(what), path_(path) {}
    long path() const noexcept { return path_; }

private:
    long path_;
};

/// Factorization, regression or fixed-point failure.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace merton
