#include "merton/regression.hpp"

#include "merton/types.hpp"

#include <fmt/format.h>

#include <cmath>
#include <vector>

namespace merton {

double PolynomialFit::evaluate(double feature, int target) const
{
    double acc = 0.0;
    for (int j = degree; j >= 0; --j) acc = acc * feature + coef(j, target);
    return acc;
}

namespace {

int distinct_values_capped(std::span<const double> f, int cap)
{
    std::vector<double> seen;
    for (double v : f) {
        bool found = false;
        for (double s : seen)
            if (s == v) {
                found = true;
                break;
            }
        if (!found) {
            seen.push_back(v);
            if (static_cast<int>(seen.size()) >= cap) break;
        }
    }
    return static_cast<int>(seen.size());
}

double binomial(int n, int k)
{
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

}  // namespace

PolynomialFit fit_polynomial(std::span<const double> feature, const Eigen::MatrixXd& targets,
                             int degree, int node)
{
    const auto n = static_cast<Eigen::Index>(feature.size());
    if (targets.rows() != n)
        throw std::invalid_argument("fit_polynomial: feature and target lengths differ");
    if (n == 0) throw NumericalError(fmt::format("regression at node {}: no samples", node));
    if (degree < 0) throw std::invalid_argument("fit_polynomial: negative degree");

    const int d = std::min(degree, distinct_values_capped(feature, degree + 1) - 1);
    const int m = d + 1;

    double mean = 0.0;
    for (double v : feature) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : feature) var += (v - mean) * (v - mean);
    const double scale = d > 0 ? std::sqrt(var / static_cast<double>(n)) : 1.0;

    // Normal equations in the standardized feature u = (f − mean)/scale.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m, targets.cols());
    Eigen::VectorXd row(m);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = (feature[static_cast<std::size_t>(i)] - mean) / scale;
        double p = 1.0;
        for (int j = 0; j < m; ++j, p *= u) row[j] = p;
        gram.selfadjointView<Eigen::Lower>().rankUpdate(row);
        rhs.noalias() += row * targets.row(i);
    }
    gram = gram.selfadjointView<Eigen::Lower>();

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gram);
    qr.setThreshold(1e-12);
    if (qr.rank() < m)
        throw NumericalError(fmt::format("regression at node {}: rank-deficient basis (rank {} of {})",
                                         node, qr.rank(), m));
    const Eigen::MatrixXd c = qr.solve(rhs);

    // p(u) with u = a f + b  ->  raw coefficients in f.
    const double a = 1.0 / scale;
    const double b = -mean / scale;
    PolynomialFit fit;
    fit.degree = d;
    fit.coef = Eigen::MatrixXd::Zero(m, targets.cols());
    for (int j = 0; j < m; ++j)
        for (int i = 0; i <= j; ++i)
            fit.coef.row(i) += c.row(j) * (binomial(j, i) * std::pow(a, i) * std::pow(b, j - i));
    return fit;
}

}  // namespace merton
