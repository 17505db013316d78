#pragma once

#include <span>

namespace merton {

/// Monte Carlo mean with its standard error.
struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Sample mean and standard error of per-path values. With antithetic
/// sampling, consecutive pairs are averaged first and the error is computed
/// over the pair means.
McEstimate summarize(std::span<const double> values, bool antithetic = false);

/// |diff| <= k * se, with an absolute roundoff floor for exact estimators.
bool within_standard_errors(double diff, double se, double k);

/// Absolute floor used by within_standard_errors.
inline constexpr double kRoundoffFloor = 1.0e-12;

}  // namespace merton
