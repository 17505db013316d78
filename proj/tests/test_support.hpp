#pragma once

#include "merton/market_model.hpp"

#include <cmath>

namespace merton::test {

// n=1, r=0.02, alpha=0.08, Sigma=0.04, T=1.
inline MarketSpec desk_spec(double rate = 0.02, double alpha = 0.08, double var = 0.04)
{
    Vec a(1);
    a << alpha;
    Mat s(1, 1);
    s << var;
    MarketSpec spec = constant_market_spec(rate, a, s);
    spec.ellipticity_eps = 1e-4;
    spec.ellipticity_C = 0.1;
    return spec;
}

inline DiscreteMarket desk(int n_steps = 250, double rate = 0.02, double alpha = 0.08, double var = 0.04)
{
    return DiscreteMarket(build_market(desk_spec(rate, alpha, var)), TimeGrid(1.0, n_steps));
}

inline Vec vec1(double v)
{
    Vec out(1);
    out << v;
    return out;
}

}  // namespace merton::test
