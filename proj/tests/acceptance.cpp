// Desk-scale acceptance run. One PASS/FAIL line per criterion; exit status 1
// if any criterion fails.
#include "merton/config.hpp"
#include "merton/fbsde.hpp"
#include "merton/oracle.hpp"
#include "merton/runner.hpp"
#include "merton/variational.hpp"
#include "test_support.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <unistd.h>

using namespace merton;
using merton::test::desk;
using merton::test::vec1;

namespace {

struct Outcome {
    bool pass = true;
    std::vector<std::string> notes;

    void check(bool ok, std::string what)
    {
        pass = pass && ok;
        notes.push_back(fmt::format("{}{}", ok ? "" : "!! ", what));
    }
};

SearchSpec box(double lo, double hi, double step, long paths, std::uint64_t seed)
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

PortfolioPolicy constant(double v) { return PortfolioPolicy::constant(vec1(v)); }

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome growth_optimal()
{
    Outcome o;
    const auto dm = desk();
    const auto t0 = std::chrono::steady_clock::now();
    const SearchResult r = grid_search(Utility::log(), dm, box(0.0, 3.0, 0.05, 10000, 101), 1.0);
    const double secs = seconds_since(t0);
    o.check(std::abs(argmax_of(r) - 1.5) <= 0.05 + 1e-12, fmt::format("grid argmax {:.4f}", argmax_of(r)));
    const double cf = std::get<PortfolioPolicy>(closed_form_policy(Utility::log(), dm)).constant_value()[0];
    o.check(cf == 1.5, fmt::format("closed form {:.17g}", cf));
    o.check(secs < 60.0, fmt::format("search {:.1f}s", secs));
    return o;
}

Outcome power_recovery()
{
    Outcome o;
    const auto dm = desk();
    const Utility u = Utility::power(0.5);
    const auto t0 = std::chrono::steady_clock::now();
    const SearchSpec spec = box(0.0, 5.0, 0.1, 100000, 202);
    const SearchResult r = grid_search(u, dm, spec, 1.0);
    const double secs = seconds_since(t0);
    o.check(std::abs(argmax_of(r) - 3.0) <= 0.1 + 1e-12, fmt::format("grid argmax {:.4f}", argmax_of(r)));

    // E[X_T^eta]/eta = exp(eta g + eta^2 pi^2 Sigma / 2)/eta with g = r + pi theta - pi^2 Sigma/2.
    const double pi = 3.0;
    const double g = 0.02 + pi * 0.06 - 0.5 * pi * pi * 0.04;
    const double oracle = std::exp(0.5 * g + 0.125 * pi * pi * 0.04) / 0.5;
    const NoisePathSet ns = sample_noise(dm, spec.seed, spec.n_paths, {true});
    const McEstimate mc = performance_criterion(u, dm, ns, constant(pi), 1.0);
    o.check(within_standard_errors(mc.mean - oracle, mc.std_error, 3.0),
            fmt::format("MC {:.6f} vs oracle {:.6f} (SE {:.2e})", mc.mean, oracle, mc.std_error));
    o.check(secs < 300.0, fmt::format("search {:.1f}s", secs));
    return o;
}

Outcome exponential_recovery()
{
    Outcome o;
    const auto dm0 = desk(250, 0.0, 0.06);
    SearchSpec spec = box(0.0, 2.0, 0.05, 100000, 303);
    spec.units = PolicyUnits::dollars;
    const SearchResult r = grid_search(Utility::exponential(2.0), dm0, spec, 1.0);
    o.check(std::abs(argmax_of(r) - 0.75) <= 0.05 + 1e-12, fmt::format("dollar grid argmax {:.4f}", argmax_of(r)));

    const NoisePathSet ns = sample_noise(dm0, 304, 10000, {true});
    const OptimalPolicyResult p = solve_fbsde_exponential(dm0, ns, 2.0, 1.0);
    const double last = p.picard_history.empty() ? std::nan("") : p.picard_history.back();
    o.check(p.converged && p.iterations <= 10 && last < 1e-3,
            fmt::format("Picard {} iterations, sigma change {:.2e}", p.iterations, last));
    const double pol = std::get<DollarPolicy>(p.policy)(0.0, 1.0)[0];
    o.check(std::abs(pol - 0.75) < 1e-3, fmt::format("Picard policy {:.6f}", pol));
    return o;
}

Outcome two_routes()
{
    Outcome o;
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 404, 100000, {true});
    std::mt19937_64 rng(4040);
    std::uniform_real_distribution<double> upi(0.5, 2.5);
    std::bernoulli_distribution coin(0.5);
    double worst_units = 0.0;  // power only; log pairs agree to roundoff
    int analytic_ok = 0;
    for (int rep = 0; rep < 5; ++rep) {
        const double pi = upi(rng);
        const double w = coin(rng) ? 1.0 : -1.0;
        for (const Utility& u : {Utility::log(), Utility::power(0.5)}) {
            const BsdeSolution y = solve_bsde_for_policy(u, dm, constant(pi));
            const auto fd = gateaux_fd(u, dm, ns, constant(pi), constant(w), 1.0);
            const auto fo = gateaux_formula(u, dm, ns, constant(pi), constant(w), 1.0, y);
            const double se = std::hypot(fd.std_error, fo.std_error);
            if (u.kind() == UtilityKind::power && se > 0.0)
                worst_units = std::max(worst_units, std::abs(fd.value - fo.value) / se);
            if (!within_standard_errors(fd.value - fo.value, se, 3.0))
                o.check(false, fmt::format("{} pi={:.3f} w={:+.0f}: FD {:.6g} formula {:.6g} SE {:.2e}", u.name(), pi,
                                           w, fd.value, fo.value, se));
            if (u.kind() == UtilityKind::log) {
                const double exact = (0.06 - 0.04 * pi) * w;
                const bool ok = within_standard_errors(fd.value - exact, fd.std_error, 3.0) &&
                                within_standard_errors(fo.value - exact, fo.std_error, 3.0);
                if (ok) ++analytic_ok;
                else o.check(false, fmt::format("log analytic {:.6g} at pi={:.3f}: FD {:.6g} formula {:.6g}", exact,
                                                pi, fd.value, fo.value));
            }
        }
    }
    o.check(true, fmt::format("power worst |FD-formula| {:.2f} SE", worst_units));
    o.check(analytic_ok == 5, fmt::format("log analytic values matched {}/5", analytic_ok));

    for (const auto& [u, star] : {std::pair{Utility::log(), 1.5}, std::pair{Utility::power(0.5), 3.0}})
        for (double w : {1.0, -1.0}) {
            const auto fd = gateaux_fd(u, dm, ns, constant(star), constant(w), 1.0);
            const auto fo =
                gateaux_formula(u, dm, ns, constant(star), constant(w), 1.0, solve_bsde_deterministic(u, dm));
            o.check(within_standard_errors(fd.value, fd.std_error, 3.0) &&
                        within_standard_errors(fo.value, fo.std_error, 3.0),
                    fmt::format("{} at pi*: FD {:.2e} (SE {:.2e}), formula {:.2e}", u.name(), fd.value, fd.std_error,
                                fo.value));
        }
    return o;
}

Outcome expansion()
{
    Outcome o;
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 505, 100000, {true});
    const auto lg = expansion_order_check(Utility::log(), dm, ns, constant(1.0), constant(1.0), 1.0);
    o.check(std::abs(lg.slope - 2.0) <= 0.05, fmt::format("log slope {:.4f}", lg.slope));
    const auto pw = expansion_order_check(Utility::power(0.5), dm, ns, constant(1.0), constant(1.0), 1.0);
    o.check(pw.slope >= 1.5, fmt::format("power slope {:.4f}", pw.slope));
    const auto pw2 = expansion_order_check(Utility::power(0.5), dm, ns, constant(2.5), constant(-1.0), 1.0);
    o.check(pw2.slope >= 1.5, fmt::format("power slope {:.4f} (pi=2.5, w=-1)", pw2.slope));
    return o;
}

Outcome bsde()
{
    Outcome o;
    const auto dm = desk();
    const BsdeSolution lg = solve_bsde_deterministic(Utility::log(), dm);
    bool exact = true;
    for (int k = 0; k <= 250; ++k) exact = exact && lg.y(k) == 1.0 && lg.sigma(k)[0] == 0.0;
    o.check(exact, "log Y = 1, sigma = 0 at every node");

    const BsdeSolution pw = solve_bsde_deterministic(Utility::power(0.5), dm);
    o.check(std::abs(pw.y(0) - std::exp(0.055)) < 1e-6, fmt::format("ODE Y_0 {:.10f}", pw.y(0)));

    const NoisePathSet ns = sample_noise(dm, 606, 100000);
    const BsdeSolution rg = solve_bsde_regression(Utility::power(0.5), dm, ns);
    const double rel = std::abs(rg.y(0) / std::exp(0.055) - 1.0);
    o.check(rel < 1e-3, fmt::format("regression Y_0 {:.8f} (rel {:.1e})", rg.y(0), rel));

    const auto dm0 = desk(250, 0.0, 0.06);
    const OptimalPolicyResult pc = solve_fbsde_exponential(dm0, sample_noise(dm0, 607, 2000, {true}), 2.0, 1.0);
    bool terminal = lg.y(250) == 1.0 && pw.y(250) == 1.0 && rg.y(250) == 1.0;
    for (double x : {-1.0, 0.5, 3.0}) terminal = terminal && pc.solution.y(250, x) == 1.0;
    o.check(terminal, "Y_T = 1 in ODE, regression and Picard modes");
    return o;
}

Outcome stationarity()
{
    Outcome o;
    const auto dm = desk();
    const NoisePathSet val = sample_noise(dm, 707, 1000);
    for (const auto& [u, star] : {std::pair{Utility::log(), 1.5}, std::pair{Utility::power(0.5), 3.0}}) {
        const BsdeSolution y = solve_bsde_deterministic(u, dm);
        const double at = stationarity_residual(u, dm, val, constant(star), y, 1.0);
        const double twice = stationarity_residual(u, dm, val, constant(2 * star), y, 1.0);
        o.check(at < 1e-8, fmt::format("{} residual at pi* {:.2e}", u.name(), at));
        o.check(twice > 1e-3, fmt::format("{} residual at 2pi* {:.2e}", u.name(), twice));
    }
    return o;
}

Outcome linearity()
{
    Outcome o;
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 808, 100);
    std::mt19937_64 rng(8080);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const double c = 0.3;
    for (int rep = 0; rep < 3; ++rep) {
        const double a = u(rng);
        const double b = u(rng);
        const auto wa = simulate_wealth_dollars(dm, ns, DollarPolicy::constant(vec1(a)), 1.0);
        const auto wb = simulate_wealth_dollars(dm, ns, DollarPolicy::constant(vec1(b)), 1.0);
        const auto wc = simulate_wealth_dollars(dm, ns, DollarPolicy::constant(vec1(c * a + (1 - c) * b)), 1.0);
        double gap = 0.0;
        double scale = 0.0;
        for (std::size_t i = 0; i < wc.wealth.size(); ++i) {
            gap = std::max(gap, std::abs(wc.wealth[i] - c * wa.wealth[i] - (1 - c) * wb.wealth[i]));
            scale = std::max({scale, std::abs(wa.wealth[i]), std::abs(wb.wealth[i]), std::abs(wc.wealth[i])});
        }
        o.check(gap < 1e-12 * scale, fmt::format("a={:.3f} b={:.3f}: gap/max|X| {:.1e}", a, b, gap / scale));
    }
    return o;
}

Outcome concavity()
{
    Outcome o;
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 909, 100000, {true});
    std::mt19937_64 rng(9090);
    std::uniform_real_distribution<double> u(-2.0, 3.0);
    for (int rep = 0; rep < 3; ++rep) {
        const double a = u(rng);
        const double b = u(rng);
        const ConcavityWitness w = concavity_midpoint(Utility::exponential(2.0), dm, ns, vec1(a), vec1(b), 1.0, 2.0);
        o.check(w.pass, fmt::format("[{:.3f}, {:.3f}]: defect {:.3e} (SE {:.1e})", a, b, w.defect.mean,
                                    w.defect.std_error));
    }
    return o;
}

Outcome k_stopping()
{
    Outcome o;
    const auto dm = desk();
    const NoisePathSet ns = sample_noise(dm, 1010, 10000);
    const WealthPath w = simulate_wealth_weights(dm, ns, StoppedPolicy(constant(3.0), 1.1), 1.0);
    const double growth = std::exp(0.02 * dm.grid().dt());
    long stopped = 0;
    bool zero = true;
    double worst = 0.0;
    for (long p = 0; p < w.n_paths; ++p) {
        const auto tau = w.stopped_at(p);
        if (!tau) continue;
        ++stopped;
        for (int k = *tau; k < dm.grid().n_steps(); ++k) {
            zero = zero && w.control(p, k, 0) == 0.0;
            worst = std::max(worst, std::abs(w.x(p, k + 1) / w.x(p, k) - growth));
        }
    }
    o.check(stopped > 0, fmt::format("{} of {} paths stopped", stopped, w.n_paths));
    o.check(zero, "post-stop weights exactly zero");
    o.check(worst < 1e-12, fmt::format("post-stop ratio error {:.1e}", worst));
    return o;
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism()
{
    Outcome o;
    const std::string base = R"([market]
n_assets = 1
r = 0.02
alpha = 0.08
sigma = 0.04
x0 = 1
T = 1
bound_M = 1
eps = 1e-4
C = 0.1
[simulation]
n_paths = 10000
seed = 42
)";
    const auto dir = std::filesystem::temp_directory_path() / fmt::format("merton_acceptance_{}", ::getpid());
    std::filesystem::create_directories(dir);
    for (const char* util : {"kind = log\n", "kind = power\neta = 0.5\n", "kind = exponential\ngamma = 2\n"}) {
        std::string text = base + "[utility]\n" + util;
        if (std::string(util).find("exponential") != std::string::npos)
            text.replace(text.find("r = 0.02"), 8, "r = 0");
        const ExperimentConfig cfg = parse_config(text);
        std::vector<std::string> outputs[2];
        for (int run_no = 0; run_no < 2; ++run_no) {
            if (run_no == 1) ::setenv(kWorkersEnv, "1", 1);
            const auto sub = dir / fmt::format("run{}", run_no);
            std::filesystem::create_directories(sub);
            const RunResult r = run(cfg, Task::verify, {(sub / "v").string(), true});
            ::unsetenv(kWorkersEnv);
            if (r.exit_code != 0) {
                o.check(false, fmt::format("verify exit {}: {}", r.exit_code, r.message));
                continue;
            }
            for (const auto& f : r.files) outputs[run_no].push_back(slurp(f));
        }
        o.check(!outputs[0].empty() && outputs[0] == outputs[1],
                fmt::format("{}: {} CSVs byte-identical across runs and worker counts", cfg.utility.kind,
                            outputs[0].size()));
    }
    std::filesystem::remove_all(dir);
    return o;
}

}  // namespace

int main()
{
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "growth-optimal recovery", growth_optimal},
        {2, "power-utility recovery", power_recovery},
        {3, "exponential r=0 recovery", exponential_recovery},
        {4, "Gateaux two-route agreement", two_routes},
        {5, "first-order expansion", expansion},
        {6, "BSDE solutions", bsde},
        {7, "stationarity residual", stationarity},
        {8, "pathwise linearity of dollar wealth", linearity},
        {9, "concavity witness", concavity},
        {10, "K-stopping", k_stopping},
        {11, "determinism", determinism},
    };

    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out.check(false, fmt::format("exception: {}", e.what()));
        }
        const double secs = seconds_since(t0);
        if (!out.pass) ++failed;
        std::string notes;
        for (const auto& n : out.notes) notes += (notes.empty() ? "" : "; ") + n;
        std::cout << fmt::format("[{}] AC{:<2} {:<38} {:7.1f}s  {}\n", out.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                                 notes)
                  << std::flush;
    }
    std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed),
                             criteria.size());
    return failed == 0 ? 0 : 1;
}
