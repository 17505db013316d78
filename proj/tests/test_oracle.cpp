#include "merton/oracle.hpp"
#include "merton/variational.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace merton;
using merton::test::desk;
using merton::test::desk_spec;
using merton::test::vec1;

namespace {

SearchSpec box(double lo, double hi, double step, long paths, std::uint64_t seed = 1)
{
    SearchSpec s;
    s.lower = vec1(lo);
    s.upper = vec1(hi);
    s.step = step;
    s.n_paths = paths;
    s.seed = seed;
    return s;
}

double argmax_of(const SearchResult& r) { return r.points[static_cast<std::size_t>(r.argmax)].policy[0]; }

}  // namespace

TEST_CASE("closed forms on the desk market")
{
    const auto dm = desk();
    CHECK(std::get<PortfolioPolicy>(closed_form_policy(Utility::log(), dm)).constant_value()[0] ==
          doctest::Approx(1.5).epsilon(1e-15));
    CHECK(std::get<PortfolioPolicy>(closed_form_policy(Utility::power(0.5), dm)).constant_value()[0] ==
          doctest::Approx(3.0).epsilon(1e-15));
    CHECK(std::get<PortfolioPolicy>(closed_form_policy(Utility::power(-1.0), dm)).constant_value()[0] ==
          doctest::Approx(0.75).epsilon(1e-15));
    const auto dm0 = desk(250, 0.0, 0.06);
    CHECK(std::get<DollarPolicy>(closed_form_policy(Utility::exponential(2.0), dm0)).constant_value()[0] ==
          doctest::Approx(0.75).epsilon(1e-15));
    CHECK_THROWS_AS(closed_form_policy(Utility::exponential(2.0), dm), std::invalid_argument);
}

TEST_CASE("zero excess return gives the zero policy")
{
    const auto flat = desk(250, 0.05, 0.05);
    for (const Utility& u : {Utility::log(), Utility::power(0.5), Utility::power(-3.0)})
        CHECK(std::get<PortfolioPolicy>(closed_form_policy(u, flat)).constant_value()[0] == 0.0);
    const auto flat0 = desk(250, 0.0, 0.0);
    CHECK(std::get<DollarPolicy>(closed_form_policy(Utility::exponential(1.0), flat0)).constant_value()[0] == 0.0);
}

TEST_CASE("closed forms refuse non-constant markets")
{
    MarketSpec spec = desk_spec();
    spec.regimes[0] = [](double t) { return Coefficients{0.02, vec1(0.08 + 0.01 * t), Mat::Constant(1, 1, 0.04)}; };
    const DiscreteMarket dm(build_market(spec), TimeGrid(1.0, 50));
    CHECK_THROWS_AS(closed_form_policy(Utility::log(), dm), std::invalid_argument);
}

TEST_CASE("grid search finds the log optimum")
{
    const auto dm = desk();
    const SearchResult r = grid_search(Utility::log(), dm, box(0.0, 3.0, 0.05, 4000), 1.0);
    CHECK(r.points.size() == 61);
    CHECK(argmax_of(r) == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(r.points.back().policy[0] == doctest::Approx(3.0));
    // Strictly unimodal on the grid.
    for (int j = 1; j <= r.argmax; ++j) CHECK(r.points[static_cast<std::size_t>(j)].value.mean > r.points[static_cast<std::size_t>(j - 1)].value.mean);
    for (std::size_t j = static_cast<std::size_t>(r.argmax) + 1; j < r.points.size(); ++j)
        CHECK(r.points[j].value.mean < r.points[j - 1].value.mean);
}

TEST_CASE("grid search: power and exponential")
{
    const auto dm = desk();
    const SearchResult p = grid_search(Utility::power(0.5), dm, box(0.0, 5.0, 0.1, 20000), 1.0);
    CHECK(std::abs(argmax_of(p) - 3.0) <= 0.1 + 1e-9);

    SearchSpec e = box(0.0, 2.0, 0.05, 20000);
    e.units = PolicyUnits::dollars;
    const SearchResult x = grid_search(Utility::exponential(2.0), desk(250, 0.0, 0.06), e, 1.0);
    CHECK(std::abs(argmax_of(x) - 0.75) <= 0.05 + 1e-9);

    SearchSpec wrong_units = box(0.0, 1.0, 0.5, 100);
    wrong_units.units = PolicyUnits::dollars;
    CHECK_THROWS_AS(grid_search(Utility::log(), dm, wrong_units, 1.0), std::invalid_argument);
}

TEST_CASE("grid search flags a gap inside one SE")
{
    const auto dm = desk();
    SearchSpec s = box(2.99, 3.01, 0.01, 200);
    s.crn = false;
    const SearchResult r = grid_search(Utility::power(0.5), dm, s, 1.0);
    CHECK(r.points.size() == 3);
    CHECK(r.inconclusive);
}

TEST_CASE("grid search: dimension limit and non-CRN runs")
{
    const int n = 4;
    MarketSpec spec = constant_market_spec(0.02, Vec::Constant(n, 0.08), Mat::Identity(n, n) * 0.04);
    spec.ellipticity_eps = 1e-4;
    spec.ellipticity_C = 0.1;
    const DiscreteMarket dm4(build_market(spec), TimeGrid(1.0, 10));
    SearchSpec s;
    s.lower = Vec::Zero(n);
    s.upper = Vec::Ones(n);
    s.step = 0.5;
    s.n_paths = 10;
    CHECK_THROWS_WITH_AS(grid_search(Utility::log(), dm4, s, 1.0), doctest::Contains("at most 3"),
                         std::invalid_argument);

    SearchSpec indep = box(0.0, 3.0, 0.5, 2000);
    indep.crn = false;
    const SearchResult r = grid_search(Utility::log(), desk(), indep, 1.0);
    CHECK(std::abs(argmax_of(r) - 1.5) <= 0.5 + 1e-9);
}

TEST_CASE("concavity midpoint witness")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 4, 4000, {true});
    const Utility u = Utility::exponential(2.0);
    for (const auto& [a, b] : {std::pair{0.0, 2.0}, std::pair{-1.0, 1.5}, std::pair{0.5, 0.6}}) {
        const ConcavityWitness w = concavity_midpoint(u, dm, ns, vec1(a), vec1(b), 1.0);
        CHECK(w.pass);
        CHECK(w.defect.mean >= 0.0);
    }
}

TEST_CASE("gradient ascent on constant weights")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 5, 4000, {true});

    const AscentResult lg = gradient_ascent(Utility::log(), dm, ns, vec1(0.0), 1.0);
    CHECK(lg.step == doctest::Approx(5.0));
    CHECK(lg.converged);
    CHECK(lg.trajectory.size() <= 50);
    CHECK(lg.trajectory.back().policy[0] == doctest::Approx(1.5).epsilon(0.01));
    for (std::size_t i = 1; i < lg.trajectory.size(); ++i) {
        const auto& prev = lg.trajectory[i - 1].value;
        const auto& cur = lg.trajectory[i].value;
        CHECK(cur.mean >= prev.mean - 2.0 * std::hypot(prev.std_error, cur.std_error));
    }

    const AscentResult at_star = gradient_ascent(Utility::log(), dm, ns, vec1(1.5), 1.0);
    CHECK(at_star.converged);
    CHECK(at_star.trajectory.size() == 1);

    const AscentResult pw = gradient_ascent(Utility::power(0.5), dm, ns, vec1(1.0), 1.0);
    CHECK(pw.converged);
    CHECK(pw.trajectory.back().policy[0] == doctest::Approx(3.0).epsilon(0.01));

    CHECK_THROWS_AS(gradient_ascent(Utility::exponential(1.0), dm, ns, vec1(0.0), 1.0), std::invalid_argument);
}
