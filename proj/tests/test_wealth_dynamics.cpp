#include "merton/wealth_dynamics.hpp"
#include "merton/stats.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace merton;
using merton::test::desk;
using merton::test::vec1;

namespace {

NoisePathSet zero_noise(long paths, int steps) {
    return NoisePathSet::from_increments(paths, steps, 1, std::vector<double>(static_cast<std::size_t>(paths) * steps, 0.0));
}

}  // namespace

TEST_CASE("zero weights grow at the short rate")
{
    const auto dm = desk(250);
    const NoisePathSet ns = sample_noise(dm, 1, 50);
    const WealthPath w = simulate_wealth_weights(dm, ns, PortfolioPolicy::constant(vec1(0.0)), 1.0);
    for (long p = 0; p < 50; ++p) CHECK(w.x(p, 250) == doctest::Approx(std::exp(0.02)).epsilon(1e-13));
}

TEST_CASE("zero-noise growth rate at pi = 1.5")
{
    const auto dm = desk(250);
    const WealthPath w = simulate_wealth_weights(dm, zero_noise(1, 250), PortfolioPolicy::constant(vec1(1.5)), 1.0);
    CHECK(w.x(0, 250) == doctest::Approx(std::exp(0.065)).epsilon(1e-13));
    CHECK(w.growth_rate[0] == doctest::Approx(0.065).epsilon(1e-14));
}

TEST_CASE("single step by hand")
{
    const auto dm = desk(1);
    const NoisePathSet ns = NoisePathSet::from_increments(1, 1, 1, {0.1});
    const WealthPath w = simulate_wealth_weights(dm, ns, PortfolioPolicy::constant(vec1(1.0)), 1.0);
    CHECK(w.log_x(0, 1) == doctest::Approx(0.16).epsilon(1e-14));
}

TEST_CASE("non-finite weights abort with a diagnostic")
{
    const auto dm = desk(10);
    const NoisePathSet ns = sample_noise(dm, 1, 4);
    const auto bad = PortfolioPolicy::time_function(1, [](double t) {
        return vec1(t > 0.5 ? std::numeric_limits<double>::quiet_NaN() : 1.0);
    });
    CHECK_THROWS_WITH_AS(simulate_wealth_weights(dm, ns, bad, 1.0), doctest::Contains("non-finite control at path 0"),
                         DomainError);
    CHECK_THROWS_AS(simulate_wealth_weights(dm, ns, PortfolioPolicy::constant(vec1(1.0)), 0.0), std::invalid_argument);
}

TEST_CASE("dollar control: zero control compounds, hand step")
{
    const auto dm = desk(250);
    const NoisePathSet ns = sample_noise(dm, 2, 5);
    const WealthPath w = simulate_wealth_dollars(dm, ns, DollarPolicy::constant(vec1(0.0)), 2.0);
    for (long p = 0; p < 5; ++p)
        CHECK(w.x(p, 250) == doctest::Approx(2.0 * std::pow(1.0 + 0.02 / 250, 250)).epsilon(1e-13));

    const auto dm0 = desk(1, 0.0, 0.06);
    const WealthPath one = simulate_wealth_dollars(dm0, zero_noise(1, 1), DollarPolicy::constant(vec1(0.75)), 1.0);
    CHECK(one.x(0, 1) == doctest::Approx(1.045).epsilon(1e-15));
}

TEST_CASE("dollar wealth is linear in the control pathwise")
{
    Mat s(2, 2);
    s << 0.04, 0.01, 0.01, 0.09;
    MarketSpec spec = constant_market_spec(0.02, Vec::Constant(2, 0.08), s);
    const DiscreteMarket dm(build_market(spec), TimeGrid(1.0, 250));
    const NoisePathSet ns = sample_noise(dm, 77, 100);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int rep = 0; rep < 3; ++rep) {
        Vec a(2), b(2);
        a << u(rng), u(rng);
        b << u(rng), u(rng);
        const double c = 0.3;
        const auto wa = simulate_wealth_dollars(dm, ns, DollarPolicy::constant(a), 1.0);
        const auto wb = simulate_wealth_dollars(dm, ns, DollarPolicy::constant(b), 1.0);
        const auto wc = simulate_wealth_dollars(dm, ns, DollarPolicy::constant(Vec(c * a + (1 - c) * b)), 1.0);
        double gap = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < wc.wealth.size(); ++i) {
            gap = std::max(gap, std::abs(wc.wealth[i] - c * wa.wealth[i] - (1 - c) * wb.wealth[i]));
            scale = std::max(scale, std::abs(wc.wealth[i]));
        }
        CHECK(gap < 1e-12 * scale);
    }
}

TEST_CASE("discount factor")
{
    const auto dm = desk(250);
    CHECK(discount_factor(dm, 0.3, 0.3) == 1.0);
    CHECK(discount_factor(dm, 0.0, 1.0) == doctest::Approx(std::exp(-0.02)).epsilon(1e-13));
    CHECK(std::abs(discount_factor(dm, 0.0, 0.5) * discount_factor(dm, 0.5, 1.0) - discount_factor(dm, 0.0, 1.0)) <
          1e-12);
}

TEST_CASE("detect_stop uses strict inequality")
{
    const std::vector<double> flat(10, 1.0);
    CHECK(!detect_stop(flat, 2.0).has_value());
    const std::vector<double> rising{1.0, 1.5, 2.5, 3.0};
    CHECK(detect_stop(rising, 2.0).value() == 2);
    const std::vector<double> touch{1.0, 2.0, 2.0};
    CHECK(!detect_stop(touch, 2.0).has_value());
    CHECK_THROWS(detect_stop(flat, 0.0));
}

TEST_CASE("K-stopped paths hold zero weights and grow at the short rate")
{
    const auto dm = desk(250);
    const NoisePathSet ns = sample_noise(dm, 12, 400);
    const StoppedPolicy sp(PortfolioPolicy::constant(vec1(3.0)), 1.1);
    const WealthPath w = simulate_wealth_weights(dm, ns, sp, 1.0);
    int stopped = 0;
    for (long p = 0; p < 400; ++p) {
        const auto tau = w.stopped_at(p);
        std::vector<double> xs(w.wealth.begin() + p * 251, w.wealth.begin() + (p + 1) * 251);
        CHECK(detect_stop(xs, 1.1) == tau);
        if (!tau) continue;
        ++stopped;
        for (int k = *tau; k < 250; ++k) {
            CHECK(w.control(p, k, 0) == 0.0);
            CHECK(std::abs(w.x(p, k + 1) / w.x(p, k) - std::exp(0.02 / 250)) < 1e-12);
        }
    }
    CHECK(stopped > 0);
    CHECK_THROWS(StoppedPolicy(PortfolioPolicy::constant(vec1(1.0)), 0.0));
}

TEST_CASE("weights and dollars agree to O(dt)")
{
    // Dollar feedback pi~ = X pi reproduces the weight path up to the Euler error.
    auto max_gap = [](int steps) {
        const auto dm = desk(steps);
        const NoisePathSet ns = sample_noise(dm, 5, 200);
        const WealthPath ww = simulate_wealth_weights(dm, ns, PortfolioPolicy::constant(vec1(1.5)), 1.0);
        const auto fb = DollarPolicy::feedback(1, [](double, double x, int) { return vec1(1.5 * x); });
        const WealthPath wd = simulate_wealth_dollars(dm, ns, fb, 1.0);
        double gap = 0.0;
        for (std::size_t i = 0; i < ww.wealth.size(); ++i)
            gap = std::max(gap, std::abs(wd.wealth[i] - ww.wealth[i]) / ww.wealth[i]);
        return gap;
    };
    const double coarse = max_gap(100);
    const double fine = max_gap(200);
    CHECK(fine < coarse);
    CHECK(fine / coarse == doctest::Approx(0.5).epsilon(0.3));
}

TEST_CASE("log-utility growth quadratic matches E[log X_T] on a weight grid")
{
    const auto dm = desk(250);
    const NoisePathSet ns = sample_noise(dm, 9, 20000, {true});
    for (double pi : {0.0, 0.5, 1.0, 1.5, 2.0, 3.0}) {
        const WealthPath w = simulate_wealth_weights(dm, ns, PortfolioPolicy::constant(vec1(pi)), 1.0);
        std::vector<double> logs(20000);
        for (long p = 0; p < 20000; ++p) logs[static_cast<std::size_t>(p)] = w.log_x(p, 250);
        const McEstimate e = summarize(logs, true);
        const double exact = 0.02 + pi * 0.06 - 0.5 * pi * pi * 0.04;
        CHECK(within_standard_errors(e.mean - exact, e.std_error, 3.0));
    }
}

TEST_CASE("positivity and CSV export")
{
    const auto dm = desk(20);
    const NoisePathSet ns = sample_noise(dm, 6, 10);
    const WealthPath w = simulate_wealth_weights(dm, ns, PortfolioPolicy::constant(vec1(8.0)), 1.0);
    for (double x : w.wealth) CHECK(x > 0.0);
    for (std::size_t i = 0; i < w.wealth.size(); ++i)
        CHECK(w.log_wealth[i] == doctest::Approx(std::log(w.wealth[i])).epsilon(1e-13));
    std::ostringstream out;
    write_wealth_csv(out, w, dm.grid());
    const std::string s = out.str();
    CHECK(s.rfind("path_id,step,t,X,logX,stopped\n", 0) == 0);
    CHECK(std::count(s.begin(), s.end(), '\n') == 1 + 10 * 21);
    CHECK(s.find('\r') == std::string::npos);
}
