#pragma once

#include <Eigen/Dense>

#include <span>

namespace merton {

/// Least-squares fit of several targets on the polynomial basis
/// 1, f, …, f^d in one scalar feature. Coefficients are returned in the raw
/// feature (column j of `coef` belongs to target j). The degree is lowered
/// to (#distinct feature values − 1) when the sample cannot support it.
struct PolynomialFit {
    Eigen::MatrixXd coef;  // (degree+1) x n_targets
    int degree = 0;

    double evaluate(double feature, int target = 0) const;
};

/// `targets` is n_samples x n_targets. Throws NumericalError (mentioning
/// `node`) when the normal equations are rank deficient.
PolynomialFit fit_polynomial(std::span<const double> feature, const Eigen::MatrixXd& targets,
                             int degree, int node);

}  // namespace merton
