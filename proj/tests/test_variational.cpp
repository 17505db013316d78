#include "merton/fbsde.hpp"
#include "merton/variational.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cmath>

using namespace merton;
using merton::test::desk;
using merton::test::vec1;

namespace {

const Utility kLog = Utility::log();
const Utility kPower = Utility::power(0.5);

PortfolioPolicy constant(double v) { return PortfolioPolicy::constant(vec1(v)); }

// E[X_T^eta]/eta for a constant weight on the desk market (lognormal moments).
double power_oracle(double pi, double eta = 0.5)
{
    const double g = 0.02 + pi * 0.06 - 0.5 * pi * pi * 0.04;
    return std::exp(eta * g + 0.5 * eta * eta * pi * pi * 0.04) / eta;
}

}  // namespace

TEST_CASE("performance criterion: risk-free policy is exact")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 1, 1000);
    const auto v = terminal_utilities(kLog, dm, ns, constant(0.0), 1.0);
    for (double u : v) CHECK(u == doctest::Approx(0.02).epsilon(1e-13));
    const McEstimate e = performance_criterion(kLog, dm, ns, constant(0.0), 1.0);
    CHECK(e.std_error < 1e-15);
}

TEST_CASE("performance criterion matches analytic oracles within 3 SE at 1e5 paths")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 2, 100000);
    const McEstimate lg = performance_criterion(kLog, dm, ns, constant(1.5), 1.0);
    CHECK(within_standard_errors(lg.mean - 0.065, lg.std_error, 3.0));
    CHECK(lg.std_error > 1e-4);  // plain sampling: a real MC check

    const McEstimate pw = performance_criterion(kPower, dm, ns, constant(3.0), 1.0);
    CHECK(within_standard_errors(pw.mean - power_oracle(3.0), pw.std_error, 3.0));
    CHECK(power_oracle(3.0) == doctest::Approx(2.0 * std::exp(0.055)));
}

TEST_CASE("domain violations report the path")
{
    const auto dm = desk(50);
    const NoisePathSet ns = sample_noise(dm, 3, 200);
    try {
        performance_criterion(kLog, dm, ns, StoppedDollarPolicy(DollarPolicy::constant(vec1(60.0))), 1.0);
        FAIL("expected a domain error");
    } catch (const DomainError& e) {
        CHECK(e.path() >= 0);
        CHECK(std::string(e.what()).find("path " + std::to_string(e.path())) != std::string::npos);
    }
}

TEST_CASE("gateaux_fd: zero direction, log-utility values, ladder errors")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 4, 20000, {true});
    const auto zero = gateaux_fd(kLog, dm, ns, constant(1.0), constant(0.0), 1.0);
    CHECK(zero.value == 0.0);
    CHECK(zero.std_error == 0.0);

    const auto d = gateaux_fd(kLog, dm, ns, constant(1.0), constant(1.0), 1.0);
    CHECK(within_standard_errors(d.value - 0.02, d.std_error, 3.0));
    CHECK(d.method == GateauxMethod::finite_difference);
    CHECK(d.rungs.size() == 4);

    for (double w : {1.0, -1.0, 0.4}) {
        const auto s = gateaux_fd(kLog, dm, ns, constant(1.5), constant(w), 1.0);
        CHECK(within_standard_errors(s.value, s.std_error, 3.0));
    }
    CHECK_THROWS_AS(gateaux_fd(kLog, dm, ns, constant(1.0), constant(1.0), 1.0, {0.05, 0.1}), std::invalid_argument);
    CHECK_THROWS_AS(gateaux_fd(kLog, dm, ns, constant(1.0), constant(1.0), 1.0, {}), std::invalid_argument);
}

TEST_CASE("gateaux_fd picks the rung with the smallest bias^2 + SE^2")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 5, 20000, {true});
    const auto d = gateaux_fd(kPower, dm, ns, constant(1.0), constant(1.0), 1.0);
    REQUIRE(d.selected >= 0);
    const auto& sel = d.rungs[static_cast<std::size_t>(d.selected)];
    const double score = sel.bias * sel.bias + sel.estimate.std_error * sel.estimate.std_error;
    for (const auto& r : d.rungs) CHECK(score <= r.bias * r.bias + r.estimate.std_error * r.estimate.std_error);
    // Exact derivative of the lognormal oracle at pi = 1.
    const double h = 1e-5;
    const double exact = (power_oracle(1.0 + h) - power_oracle(1.0 - h)) / (2 * h);
    CHECK(within_standard_errors(d.value - exact, d.std_error, 3.0));
}

TEST_CASE("gateaux_formula: log reduction, optimum and zero direction")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 6, 4000, {true});
    const BsdeSolution ylog = solve_bsde_deterministic(kLog, dm);
    const auto f = gateaux_formula(kLog, dm, ns, constant(1.0), constant(1.0), 1.0, ylog);
    CHECK(f.value == doctest::Approx(0.02).epsilon(1e-12));
    const auto at_star = gateaux_formula(kLog, dm, ns, constant(1.5), constant(1.0), 1.0, ylog);
    CHECK(std::abs(at_star.value) < 1e-15);
    const auto z = gateaux_formula(kLog, dm, ns, constant(1.0), constant(0.0), 1.0, ylog);
    CHECK(z.value == 0.0);

    const BsdeSolution ypow = solve_bsde_deterministic(kPower, dm);
    const auto p = gateaux_formula(kPower, dm, ns, constant(3.0), constant(-1.0), 1.0, ypow);
    CHECK(std::abs(p.value) < 1e-14);
}

TEST_CASE("two routes agree under CRN")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 7, 20000, {true});
    for (const Utility& u : {kLog, kPower})
        for (double pi : {0.7, 2.2})
            for (double w : {1.0, -1.0}) {
                const BsdeSolution y = solve_bsde_for_policy(u, dm, constant(pi));
                const auto fd = gateaux_fd(u, dm, ns, constant(pi), constant(w), 1.0);
                const auto fo = gateaux_formula(u, dm, ns, constant(pi), constant(w), 1.0, y);
                CHECK(within_standard_errors(fd.value - fo.value, std::hypot(fd.std_error, fo.std_error), 3.0));
            }
}

TEST_CASE("formula derivative points towards the optimum")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 8, 4000, {true});
    for (const auto& [u, star] : {std::pair{kLog, 1.5}, std::pair{kPower, 3.0}})
        for (double pi : {0.5, 1.0, 2.5, 4.0}) {
            if (pi == star) continue;
            const BsdeSolution y = solve_bsde_for_policy(u, dm, constant(pi));
            const auto f = gateaux_formula(u, dm, ns, constant(pi), constant(star - pi), 1.0, y);
            CHECK(f.value > 0.0);
        }
}

TEST_CASE("perturbation processes: I^omega accumulation and g/h/q identities")
{
    const auto dm = desk(100);
    const NoisePathSet ns = sample_noise(dm, 9, 3);
    const double pi = 0.8;
    const double w = -0.6;
    for (const Utility& u : {kLog, kPower}) {
        const auto nodes = perturbation_processes(u, dm, ns, 1, constant(pi), constant(w), 1.0);
        REQUIRE(nodes.size() == 101);
        double m = 0.0;
        for (int k = 0; k <= 100; ++k) {
            const double direct = w * (0.06 - 0.04 * pi) * k * dm.grid().dt() + w * m;
            CHECK(std::abs(nodes[static_cast<std::size_t>(k)].I_omega - direct) < 1e-12);
            if (k < 100) m += ns.increment(1, k)[0];
        }
        for (int k = 0; k < 100; ++k) {
            const auto& n = nodes[static_cast<std::size_t>(k)];
            const double F2 = n.q - n.F1;
            CHECK(n.g[0] == doctest::Approx(n.F1 * 0.06 + F2 * 0.04 * pi).epsilon(1e-14));
            if (u.kind() == UtilityKind::log) {
                CHECK(n.q == 0.0);
                CHECK(n.h == 0.0);
            } else {
                CHECK(F2 == doctest::Approx(-0.5 * n.F1).epsilon(1e-14));
            }
        }
    }
}

TEST_CASE("expansion order: exact log case, zero direction, power slope")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 10, 20000, {true});
    const auto ex = expansion_order_check(kLog, dm, ns, constant(1.0), constant(1.0), 1.0);
    CHECK(ex.slope == doctest::Approx(2.0).epsilon(0.025));
    for (std::size_t i = 0; i < ex.ladder.size(); ++i) {
        const double e = ex.ladder[i];
        CHECK(ex.remainder[i] == doctest::Approx(-0.5 * e * e * 0.04).epsilon(1e-8));
    }
    CHECK(ex.integrated_first_order == doctest::Approx(0.02).epsilon(1e-10));

    const auto z = expansion_order_check(kLog, dm, ns, constant(1.0), constant(0.0), 1.0);
    for (double r : z.remainder) CHECK(r == 0.0);
    CHECK(std::isnan(z.slope));

    const auto p = expansion_order_check(kPower, dm, ns, constant(2.0), constant(1.0), 1.0);
    CHECK(p.slope >= 1.5);
}

TEST_CASE("M-hat has constant mean")
{
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 11, 20000, {true});
    const auto lg = mhat_martingale_check(kLog, dm, ns, constant(1.5), solve_bsde_deterministic(kLog, dm), 1.0);
    CHECK(lg.max_se_units == 0.0);
    CHECK(lg.nodes.front().node == 0);

    const auto pw = mhat_martingale_check(kPower, dm, ns, constant(3.0), solve_bsde_deterministic(kPower, dm), 1.0);
    CHECK(pw.max_se_units < 3.0);
    // A policy solved for the wrong pi breaks the identity.
    const auto wrong =
        mhat_martingale_check(kPower, dm, ns, constant(1.0), solve_bsde_deterministic(kPower, dm), 1.0);
    CHECK(wrong.max_se_units > 3.0);
}
