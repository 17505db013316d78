#include "merton/runner.hpp"

#include "merton/fbsde.hpp"
#include "merton/oracle.hpp"
#include "merton/parallel.hpp"
#include "merton/variational.hpp"
#include "merton/wealth_dynamics.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <iostream>
#include <sstream>
#include <variant>

namespace merton {

std::optional<Task> parse_task(const std::string& name)
{
    if (name == "simulate") return Task::simulate;
    if (name == "solve") return Task::solve;
    if (name == "verify") return Task::verify;
    if (name == "search") return Task::search;
    return std::nullopt;
}

std::string to_string(Task task)
{
    switch (task) {
    case Task::simulate: return "simulate";
    case Task::solve: return "solve";
    case Task::verify: return "verify";
    case Task::search: return "search";
    }
    return "unknown";
}

std::string run_id(const ExperimentConfig& config, Task task)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    mix(config.source_text);
    mix("\x1f" + to_string(task) + "\x1f" + std::to_string(config.simulation.seed));
    return fmt::format("{:016x}", h);
}

MarketModel market_from_config(const ExperimentConfig& config)
{
    const auto& m = config.market;
    MarketSpec spec;
    spec.n_assets = m.n_assets;
    if (m.regime) {
        const auto& rc = *m.regime;
        for (int s = 0; s < rc.states; ++s) {
            Coefficients c{rc.rate[static_cast<std::size_t>(s)], rc.alpha[static_cast<std::size_t>(s)],
                           rc.sigma[static_cast<std::size_t>(s)]};
            spec.regimes.push_back([c](double) { return c; });
        }
        spec.generator = rc.generator;
    } else {
        spec = constant_market_spec(m.r, m.alpha, m.sigma);
    }
    spec.bound_M = m.bound_M;
    spec.ellipticity_eps = m.eps;
    spec.ellipticity_C = m.C;
    spec.horizon = m.T;
    spec.validation_points = 10 * m.n_steps + 1;
    try {
        return build_market(spec);
    } catch (const std::invalid_argument& e) {
        throw ConfigError({fmt::format("[market] {}", e.what())});
    }
}

Utility utility_from_config(const ExperimentConfig& config)
{
    const auto& u = config.utility;
    if (u.kind == "log") return Utility::log();
    if (u.kind == "power") return Utility::power(u.eta);
    if (u.kind == "exponential") return Utility::exponential(u.gamma);
    throw ConfigError({fmt::format("[utility] kind: unknown utility '{}'", u.kind)});
}

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

/// RFC-4180 quoting for free-text fields.
std::string field(const std::string& s)
{
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

class Context {
public:
    Context(const ExperimentConfig& cfg, Task task, const RunOptions& opts)
        : cfg(cfg), task(task), prefix(opts.out_prefix.empty() ? cfg.output_prefix : opts.out_prefix),
          model(market_from_config(cfg)), market(model, TimeGrid(cfg.market.T, cfg.market.n_steps)),
          utility(utility_from_config(cfg))
    {
    }

    std::ofstream open(const std::string& suffix)
    {
        const std::string path = prefix + suffix;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error(fmt::format("runner: cannot open '{}' for writing", path));
        files.push_back(path);
        return out;
    }

    NoisePathSet noise(long n_paths, std::uint64_t seed_offset = 0) const
    {
        return sample_noise(market, cfg.simulation.seed + seed_offset, n_paths, {cfg.simulation.antithetic});
    }

    long even(long n) const { return cfg.simulation.antithetic && n % 2 != 0 ? n + 1 : n; }

    void echo(const std::string& key, const std::string& value) { header.emplace_back(key, value); }

    const ExperimentConfig& cfg;
    Task task;
    std::string prefix;
    MarketModel model;
    DiscreteMarket market;
    Utility utility;
    std::vector<std::string> files;
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<VerifyRow> checks;
};

bool decoupled(const Utility& u) { return u.is_scale_invariant(); }

PolicyUnits units_for(const std::string& configured, const Utility& u)
{
    if (configured == "weights") return PolicyUnits::weights;
    if (configured == "dollars") return PolicyUnits::dollars;
    return decoupled(u) ? PolicyUnits::weights : PolicyUnits::dollars;
}

std::string resolve_mode(const Context& ctx);
OptimalPolicyResult solve_optimum(Context& ctx, const std::string& mode);

bool has_closed_form(const Context& ctx)
{
    return ctx.market.is_constant() && (decoupled(ctx.utility) || ctx.market.at(0).rate == 0.0);
}

void run_simulate(Context& ctx)
{
    const auto& sc = ctx.cfg.simulate;
    // An explicit policy is constant in the configured units. Otherwise the
    // optimum is used: closed form when there is one, the solver when not.
    std::optional<OptimalControl> control;
    if (sc.policy) {
        const Vec& v = *sc.policy;
        if (units_for(sc.units, ctx.utility) == PolicyUnits::weights) control = PortfolioPolicy::constant(v);
        else control = DollarPolicy::constant(v);
        ctx.echo("policy", fmt::format("{}", fmt::join(v.data(), v.data() + v.size(), " ")));
    } else if (has_closed_form(ctx)) {
        control = closed_form_policy(ctx.utility, ctx.market);
        const Vec v = std::visit([](const auto& p) { return p.constant_value(); }, *control);
        ctx.echo("policy", fmt::format("{}", fmt::join(v.data(), v.data() + v.size(), " ")));
    } else {
        const std::string mode = resolve_mode(ctx);
        ctx.echo("policy", "solved (" + mode + ")");
        control = solve_optimum(ctx, mode).policy;
    }
    const bool weights = std::holds_alternative<PortfolioPolicy>(*control);
    ctx.echo("units", weights ? "weights" : "dollars");
    ctx.echo("K", num(sc.K));

    const NoisePathSet noise = ctx.noise(ctx.cfg.simulation.n_paths);
    const WealthPath w = weights ? simulate_wealth_weights(ctx.market, noise,
                                                           StoppedPolicy(std::get<PortfolioPolicy>(*control), sc.K),
                                                           ctx.cfg.market.x0)
                                 : simulate_wealth_dollars(ctx.market, noise,
                                                           StoppedDollarPolicy(std::get<DollarPolicy>(*control), sc.K),
                                                           ctx.cfg.market.x0);
    auto out = ctx.open("_wealth.csv");
    write_wealth_csv(out, w, ctx.market.grid());

    if (sc.prices) {
        const PricePaths pp = simulate_asset_prices(ctx.market, noise);
        auto po = ctx.open("_prices.csv");
        po << "path_id,step,t,P0";
        for (int i = 0; i < pp.n_assets; ++i) po << ",P" << (i + 1);
        po << '\n';
        for (long p = 0; p < pp.n_paths; ++p)
            for (int k = 0; k < pp.n_nodes; ++k) {
                po << p << ',' << k << ',' << num(ctx.market.grid().node(k)) << ',' << num(pp.bank(p, k));
                for (int i = 0; i < pp.n_assets; ++i) po << ',' << num(pp.price(p, k, i));
                po << '\n';
            }
    }
}

std::string resolve_mode(const Context& ctx)
{
    const std::string& mode = ctx.cfg.solve.mode;
    if (mode != "auto") return mode;
    if (!decoupled(ctx.utility)) return "picard";
    return ctx.model.is_modulated() ? "regression" : "ode";
}

OptimalPolicyResult solve_optimum(Context& ctx, const std::string& mode)
{
    const auto& so = ctx.cfg.solve;
    const double x0 = ctx.cfg.market.x0;
    if (mode == "picard") {
        if (ctx.utility.kind() != UtilityKind::exponential)
            throw ConfigError({"[solve] mode: picard needs exponential utility"});
        PicardOptions po;
        po.max_iters = so.picard_iters;
        po.tol = so.picard_tol;
        po.damping = so.damping;
        po.basis_degree = so.basis_degree >= 0 ? std::max(1, so.basis_degree) : 1;
        ctx.echo("basis_degree", std::to_string(po.basis_degree));
        return solve_fbsde_exponential(ctx.market, ctx.noise(ctx.cfg.simulation.n_paths), ctx.utility.gamma(), x0,
                                       po);
    }
    if (!decoupled(ctx.utility))
        throw ConfigError({fmt::format("[solve] mode: {} needs log or power utility", mode)});
    const NoisePathSet validation = ctx.noise(ctx.even(so.validation_paths), 0x5a11d);
    if (mode == "ode") return optimal_policy(ctx.utility, ctx.market, solve_bsde_deterministic(ctx.utility, ctx.market),
                                             validation, x0);
    RegressionOptions ro;
    ro.basis_degree = so.basis_degree >= 0 ? so.basis_degree : 3;
    ro.min_paths = so.min_paths;
    ctx.echo("basis_degree", std::to_string(ro.basis_degree));
    const BsdeSolution sol =
        solve_bsde_regression(ctx.utility, ctx.market, ctx.noise(ctx.cfg.simulation.n_paths), ro);
    return optimal_policy(ctx.utility, ctx.market, sol, validation, x0);
}

void run_solve(Context& ctx)
{
    const std::string mode = resolve_mode(ctx);
    ctx.echo("mode", mode);
    const OptimalPolicyResult res = solve_optimum(ctx, mode);
    const auto& sol = res.solution;
    const auto& grid = ctx.market.grid();
    const int n = ctx.market.n_assets();

    std::vector<double> features;
    if (sol.feature() == BsdeFeature::regime)
        for (int s = 0; s < sol.n_states(); ++s) features.push_back(s);
    else if (sol.feature() == BsdeFeature::wealth)
        features = ctx.cfg.solve.policy_wealth.empty() ? std::vector<double>{ctx.cfg.market.x0}
                                                       : ctx.cfg.solve.policy_wealth;
    else
        features.push_back(0.0);

    const double main_feature = sol.feature() == BsdeFeature::regime ? ctx.model.initial_regime()
                                : sol.feature() == BsdeFeature::wealth ? ctx.cfg.market.x0
                                                                       : 0.0;
    {
        auto out = ctx.open("_bsde.csv");
        write_bsde_csv(out, sol, grid, main_feature);
    }
    if (sol.feature() == BsdeFeature::regime)
        for (int s = 0; s < sol.n_states(); ++s) {
            auto out = ctx.open(fmt::format("_bsde_regime{}.csv", s));
            write_bsde_csv(out, sol, grid, s);
        }

    auto out = ctx.open("_policy.csv");
    const bool dollars = std::holds_alternative<DollarPolicy>(res.policy);
    out << "t," << (sol.feature() == BsdeFeature::wealth ? "wealth" : "regime");
    for (int i = 0; i < n; ++i) out << ",pi_" << (i + 1);
    out << ",units\n";
    for (int k = 0; k < grid.n_steps(); ++k)
        for (double f : features) {
            const double t = grid.node(k);
            const int reg = sol.feature() == BsdeFeature::regime ? static_cast<int>(f) : 0;
            const double x = sol.feature() == BsdeFeature::wealth ? f : std::nan("");
            const Vec pi = std::visit([&](const auto& p) { return Vec(p(t, x, reg)); }, res.policy);
            out << num(t) << ',' << num(f);
            for (int i = 0; i < n; ++i) out << ',' << num(pi[i]);
            out << ',' << (dollars ? "dollars" : "weights") << '\n';
        }

    ctx.echo("Y0", num(sol.y(0, main_feature)));
    ctx.echo("residual", num(res.residual));
    ctx.echo("picard_iterations", std::to_string(res.iterations));
}

void add_within(Context& ctx, const std::string& name, double diff, double se, double k)
{
    ctx.checks.push_back({name, diff, se, k * se + kRoundoffFloor, within_standard_errors(diff, se, k)});
}

void verify_decoupled(Context& ctx)
{
    const auto& vc = ctx.cfg.verify;
    const double x0 = ctx.cfg.market.x0;
    const int n = ctx.market.n_assets();
    const auto& u = ctx.utility;
    const std::string mode = ctx.model.is_modulated() ? "regression" : "ode";
    ctx.echo("mode", mode);

    const OptimalPolicyResult opt = solve_optimum(ctx, mode);
    const auto& pi_star = std::get<PortfolioPolicy>(opt.policy);
    const PortfolioPolicy omega = PortfolioPolicy::constant(vc.direction ? *vc.direction : Vec(Vec::Ones(n)));
    const NoisePathSet noise = ctx.noise(ctx.cfg.simulation.n_paths);
    const StoppedPolicy star(pi_star, vc.K);

    // Two routes at the test policy (deterministic markets only).
    if (!ctx.model.is_modulated()) {
        const PortfolioPolicy pi = vc.policy ? PortfolioPolicy::constant(*vc.policy) : pi_star;
        const StoppedPolicy sp(pi, vc.K);
        const BsdeSolution sol = solve_bsde_for_policy(u, ctx.market, pi);
        const auto fd = gateaux_fd(u, ctx.market, noise, sp, omega, x0, vc.ladder);
        const auto fo = gateaux_formula(u, ctx.market, noise, sp, omega, x0, sol);
        add_within(ctx, "fd_vs_formula", fd.value - fo.value, std::hypot(fd.std_error, fo.std_error), vc.se_k);
        ctx.echo("fd_value", num(fd.value));
        ctx.echo("formula_value", num(fo.value));
        if (!fd.diagnostic.empty()) ctx.echo("fd_diagnostic", fd.diagnostic);
    }

    const auto fd_star = gateaux_fd(u, ctx.market, noise, star, omega, x0, vc.ladder);
    add_within(ctx, "fd_at_optimum", fd_star.value, fd_star.std_error, vc.se_k);
    const auto fo_star = gateaux_formula(u, ctx.market, noise, star, omega, x0, opt.solution);
    add_within(ctx, "formula_at_optimum", fo_star.value, fo_star.std_error, vc.se_k);

    const PortfolioPolicy pi_exp = vc.policy ? PortfolioPolicy::constant(*vc.policy) : pi_star;
    try {
        const auto ex = expansion_order_check(u, ctx.market, noise, StoppedPolicy(pi_exp, vc.K), omega, x0,
                                              vc.expansion_ladder);
        ctx.checks.push_back({"expansion_slope", ex.slope, std::nan(""), vc.slope_min, ex.slope >= vc.slope_min});
    } catch (const NumericalError& e) {
        ctx.checks.push_back({"expansion_slope", std::nan(""), std::nan(""), vc.slope_min, false});
        ctx.echo("expansion_error", e.what());
    }

    const auto mh = mhat_martingale_check(u, ctx.market, noise, star, opt.solution, x0, vc.mhat_nodes);
    ctx.checks.push_back({"mhat_max_se_units", mh.max_se_units, std::nan(""), vc.se_k, mh.max_se_units < vc.se_k});

    const NoisePathSet validation = ctx.noise(ctx.even(ctx.cfg.solve.validation_paths), 0x5a11d);
    ctx.checks.push_back(
        {"stationarity_residual_optimum", opt.residual, std::nan(""), vc.residual_tol, opt.residual < vc.residual_tol});
    const double wrong = stationarity_residual(u, ctx.market, validation,
                                               StoppedPolicy(PortfolioPolicy::combine(pi_star, 2.0, pi_star, 0.0), vc.K),
                                               opt.solution, x0);
    ctx.checks.push_back({"stationarity_residual_doubled", wrong, std::nan(""), vc.wrong_residual_min,
                          wrong > vc.wrong_residual_min});
}

void verify_exponential(Context& ctx)
{
    const auto& vc = ctx.cfg.verify;
    const double x0 = ctx.cfg.market.x0;
    const int n = ctx.market.n_assets();
    const auto& u = ctx.utility;
    ctx.echo("mode", "picard");

    const OptimalPolicyResult opt = solve_optimum(ctx, "picard");
    const auto& star = std::get<DollarPolicy>(opt.policy);
    ctx.checks.push_back({"picard_iterations", static_cast<double>(opt.iterations), std::nan(""),
                          static_cast<double>(ctx.cfg.solve.picard_iters), opt.converged});
    ctx.checks.push_back(
        {"picard_residual", opt.residual, std::nan(""), vc.residual_tol, opt.residual < vc.residual_tol});

    const NoisePathSet noise = ctx.noise(ctx.cfg.simulation.n_paths);
    const Vec omega_v = vc.direction ? *vc.direction : Vec(Vec::Ones(n));
    const DollarPolicy omega = DollarPolicy::constant(omega_v);
    const auto fd = gateaux_fd(u, ctx.market, noise, StoppedDollarPolicy(star, vc.K), omega, x0, vc.ladder);
    add_within(ctx, "fd_at_optimum", fd.value, fd.std_error, vc.se_k);

    // Pathwise linearity and midpoint concavity on constant dollar policies.
    const auto& c0 = ctx.market.at(0);
    const Vec a = vc.policy ? *vc.policy : Vec(c0.sigma_inv_theta / u.gamma());
    const Vec b = a + omega_v;
    const double cw = 0.3;
    const long lin_paths = std::min<long>(ctx.even(100), ctx.cfg.simulation.n_paths);
    const NoisePathSet ln = ctx.noise(lin_paths);
    const auto wa = simulate_wealth_dollars(ctx.market, ln, DollarPolicy::constant(a), x0);
    const auto wb = simulate_wealth_dollars(ctx.market, ln, DollarPolicy::constant(b), x0);
    const auto wc = simulate_wealth_dollars(ctx.market, ln, DollarPolicy::constant(Vec(cw * a + (1.0 - cw) * b)), x0);
    double gap = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < wc.wealth.size(); ++i) {
        gap = std::max(gap, std::abs(wc.wealth[i] - cw * wa.wealth[i] - (1.0 - cw) * wb.wealth[i]));
        scale = std::max(scale, std::abs(wc.wealth[i]));
    }
    const double rel = scale > 0.0 ? gap / scale : gap;
    ctx.checks.push_back({"dollar_linearity_rel_gap", rel, std::nan(""), 1e-12, rel < 1e-12});

    const auto cc = concavity_midpoint(u, ctx.market, noise, a - omega_v, b, x0);
    ctx.checks.push_back({"concavity_midpoint_defect", cc.defect.mean, cc.defect.std_error,
                          -2.0 * cc.defect.std_error - kRoundoffFloor, cc.pass});
}

void run_verify(Context& ctx)
{
    if (ctx.utility.kind() == UtilityKind::exponential)
        verify_exponential(ctx);
    else
        verify_decoupled(ctx);
    auto out = ctx.open("_verify.csv");
    out << "statistic,value,std_error,threshold,pass\n";
    for (const auto& r : ctx.checks)
        out << field(r.statistic) << ',' << num(r.value) << ',' << (std::isnan(r.std_error) ? "" : num(r.std_error))
            << ',' << num(r.threshold) << ',' << (r.pass ? "pass" : "fail") << '\n';
}

void run_search(Context& ctx)
{
    const auto& sc = ctx.cfg.search;
    const double x0 = ctx.cfg.market.x0;
    const int n = ctx.market.n_assets();
    ctx.echo("method", sc.method);
    if (sc.method == "ascent") {
        AscentOptions ao;
        ao.step = sc.ascent_step;
        ao.tol = sc.ascent_tol;
        ao.max_iters = sc.ascent_max_iters;
        ao.threshold_K = sc.K;
        const Vec start = sc.start ? *sc.start : Vec(Vec::Zero(n));
        const auto res =
            gradient_ascent(ctx.utility, ctx.market, ctx.noise(ctx.cfg.simulation.n_paths), start, x0, ao);
        auto out = ctx.open("_ascent.csv");
        out << "iter";
        for (int i = 0; i < n; ++i) out << ",pi_" << (i + 1);
        for (int i = 0; i < n; ++i) out << ",grad_" << (i + 1);
        out << ",value,std_error\n";
        for (std::size_t j = 0; j < res.trajectory.size(); ++j) {
            const auto& it = res.trajectory[j];
            out << j;
            for (int i = 0; i < n; ++i) out << ',' << num(it.policy[i]);
            for (int i = 0; i < n; ++i) out << ',' << num(it.gradient[i]);
            out << ',' << num(it.value.mean) << ',' << num(it.value.std_error) << '\n';
        }
        ctx.echo("step", num(res.step));
        ctx.echo("converged", res.converged ? "true" : "false");
        if (!res.converged) throw NumericalError("search: gradient ascent did not converge");
        return;
    }

    std::vector<std::string> errors;
    if (!sc.lower) errors.emplace_back("[search] missing required key 'lower' for grid search");
    if (!sc.upper) errors.emplace_back("[search] missing required key 'upper' for grid search");
    if (!errors.empty()) throw ConfigError(errors);

    SearchSpec spec;
    spec.units = units_for(sc.units, ctx.utility);
    spec.lower = *sc.lower;
    spec.upper = *sc.upper;
    spec.step = sc.step;
    spec.n_paths = ctx.cfg.simulation.n_paths;
    spec.seed = ctx.cfg.simulation.seed;
    spec.crn = sc.crn;
    spec.antithetic = ctx.cfg.simulation.antithetic;
    spec.threshold_K = sc.K;
    const SearchResult res = grid_search(ctx.utility, ctx.market, spec, x0);

    auto out = ctx.open("_search.csv");
    for (int i = 0; i < n; ++i) out << "pi_" << (i + 1) << ',';
    out << "value,std_error,argmax\n";
    auto row = [&](const SearchPoint& p, int flag) {
        for (int i = 0; i < n; ++i) out << num(p.policy[i]) << ',';
        out << num(p.value.mean) << ',' << num(p.value.std_error) << ',' << flag << '\n';
    };
    for (const auto& p : res.points) row(p, 0);
    row(res.points[static_cast<std::size_t>(res.argmax)], 1);

    ctx.echo("units", spec.units == PolicyUnits::weights ? "weights" : "dollars");
    ctx.echo("gap", num(res.gap.mean));
    ctx.echo("gap_std_error", num(res.gap.std_error));
    ctx.echo("inconclusive", res.inconclusive ? "true" : "false");
}

void write_header(Context& ctx, const RunResult& r)
{
    const auto& c = ctx.cfg;
    auto out = ctx.open("_run.csv");
    out << "key,value\n";
    auto kv = [&out](const std::string& k, const std::string& v) { out << field(k) << ',' << field(v) << '\n'; };
    kv("task", to_string(r.task));
    kv("run_id", r.run_id);
    kv("seed", std::to_string(c.simulation.seed));
    kv("n_paths", std::to_string(c.simulation.n_paths));
    kv("n_steps", std::to_string(c.market.n_steps));
    kv("dt", num(ctx.market.grid().dt()));
    kv("antithetic", c.simulation.antithetic ? "true" : "false");
    for (const auto& [k, v] : ctx.header) kv(k, v);
    if (r.verify_passed) kv("verify", *r.verify_passed ? "pass" : "fail");
    // Names only, so outputs written under different directories compare equal.
    for (const auto& f : ctx.files) kv("file", std::filesystem::path(f).filename().string());
}

int workers_from_env(int configured)
{
    if (const char* env = std::getenv(kWorkersEnv)) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
    }
    return configured;
}

}  // namespace

RunResult run(const ExperimentConfig& config, Task task, const RunOptions& options)
{
    const auto start = std::chrono::steady_clock::now();
    RunResult r;
    r.task = task;
    r.run_id = run_id(config, task);
    detail::set_worker_count(workers_from_env(config.simulation.workers));

    auto finish = [&]() {
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return r;
    };

    std::optional<Context> ctx;
    try {
        ctx.emplace(config, task, options);
    } catch (const ConfigError& e) {
        r.exit_code = 2;
        r.message = e.what();
        return finish();
    }

    try {
        switch (task) {
        case Task::simulate: run_simulate(*ctx); break;
        case Task::solve: run_solve(*ctx); break;
        case Task::verify: run_verify(*ctx); break;
        case Task::search: run_search(*ctx); break;
        }
        if (task == Task::verify) {
            bool ok = true;
            for (const auto& c : ctx->checks) ok = ok && c.pass;
            r.verify_passed = ok;
            r.checks = ctx->checks;
            if (!ok) {
                r.exit_code = 1;
                r.message = "verify: one or more checks failed";
            }
        }
    } catch (const ConfigError& e) {
        r.exit_code = 2;
        r.message = e.what();
    } catch (const std::exception& e) {
        r.exit_code = 1;
        r.message = fmt::format("{}: {}", to_string(task), e.what());
    }

    try {
        write_header(*ctx, r);
    } catch (const std::exception& e) {
        if (r.exit_code == 0) {
            r.exit_code = 1;
            r.message = e.what();
        }
    }
    r.files = ctx->files;
    return finish();
}

}  // namespace merton
