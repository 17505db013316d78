#include "merton/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace merton {

McEstimate summarize(std::span<const double> values, bool antithetic)
{
    if (values.empty()) return {};
    const std::size_t stride = antithetic ? 2 : 1;
    if (antithetic && values.size() % 2 != 0)
        throw std::invalid_argument("summarize: antithetic sample needs an even path count");

    const std::size_t n = values.size() / stride;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double v = values[i * stride];
        if (antithetic) v = 0.5 * (v + values[i * stride + 1]);
        mean += v;
    }
    mean /= static_cast<double>(n);
    if (n < 2) return {mean, 0.0};

    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double v = values[i * stride];
        if (antithetic) v = 0.5 * (v + values[i * stride + 1]);
        ss += (v - mean) * (v - mean);
    }
    const double var = ss / static_cast<double>(n - 1);
    return {mean, std::sqrt(var / static_cast<double>(n))};
}

bool within_standard_errors(double diff, double se, double k)
{
    return std::abs(diff) <= k * se + kRoundoffFloor;
}

}  // namespace merton
