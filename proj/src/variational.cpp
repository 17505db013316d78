#include "merton/variational.hpp"

#include "merton/parallel.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace merton {

std::string to_string(GateauxMethod method)
{
    return method == GateauxMethod::finite_difference ? "finite-difference" : "formula";
}

namespace {

double utility_of_log_wealth(const Utility& u, double log_x, long path)
{
    if (u.kind() == UtilityKind::log) return log_x;
    const double x = std::exp(log_x);
    if (!u.in_domain(x))
        throw DomainError(fmt::format("{} utility: terminal wealth {} outside the domain on path {}", u.name(), x,
                                      path),
                          path);
    return u.value(x);
}

double utility_of_wealth(const Utility& u, double x, long path)
{
    if (!u.in_domain(x))
        throw DomainError(fmt::format("{} utility: terminal wealth {} outside the domain on path {}", u.name(), x,
                                      path),
                          path);
    return u.value(x);
}

void check_inputs(const DiscreteMarket& market, const NoisePathSet& noise, int policy_assets)
{
    if (noise.n_assets() != market.n_assets() || noise.n_steps() != market.grid().n_steps())
        throw std::invalid_argument("variational: noise shape does not match the market grid");
    if (policy_assets != market.n_assets())
        throw std::invalid_argument("variational: policy asset count does not match the market");
}

void check_ladder(const std::vector<double>& ladder)
{
    if (ladder.empty()) throw std::invalid_argument("epsilon ladder is empty");
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (!(ladder[i] > 0.0) || !std::isfinite(ladder[i]))
            throw std::invalid_argument("epsilon ladder entries must be positive and finite");
        if (i > 0 && !(ladder[i] < ladder[i - 1]))
            throw std::invalid_argument("epsilon ladder must be strictly decreasing");
    }
}

bool is_zero_direction(const auto& direction)
{
    return direction.kind() == std::remove_cvref_t<decltype(direction)>::Kind::constant &&
           direction.constant_value().isZero(0.0);
}

template <class Units>
Stopped<Units> shifted(const Stopped<Units>& base, const Policy<Units>& direction, double eps)
{
    return Stopped<Units>(Policy<Units>::combine(base.base, 1.0, direction, eps), base.threshold);
}

/// Picks the rung minimizing bias² + SE², bias from successive rungs.
GateauxEstimate select_rung(std::vector<GateauxRung> rungs, const std::vector<double>& ladder)
{
    GateauxEstimate out;
    out.method = GateauxMethod::finite_difference;
    out.epsilon_ladder = ladder;
    const std::size_t m = rungs.size();
    for (std::size_t i = 0; i < m; ++i) {
        if (m < 2) {
            rungs[i].bias = std::nan("");
            continue;
        }
        const std::size_t a = i == 0 ? 0 : i - 1;
        const std::size_t b = i == 0 ? 1 : i;
        const double e2a = rungs[a].epsilon * rungs[a].epsilon;
        const double e2b = rungs[b].epsilon * rungs[b].epsilon;
        const double c = (rungs[a].estimate.mean - rungs[b].estimate.mean) / (e2a - e2b);
        rungs[i].bias = c * rungs[i].epsilon * rungs[i].epsilon;
    }
    std::size_t best = m - 1;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        const double bias = std::isnan(rungs[i].bias) ? 0.0 : rungs[i].bias;
        const double se = rungs[i].estimate.std_error;
        const double score = bias * bias + se * se;
        // Ties go to the smaller epsilon.
        if (score <= best_score) {
            best_score = score;
            best = i;
        }
    }
    if (m >= 2) {
        const auto& lo = rungs[m - 1];
        const auto& prev = rungs[m - 2];
        const double step = std::abs(lo.estimate.mean - prev.estimate.mean);
        const double se = std::hypot(lo.estimate.std_error, prev.estimate.std_error);
        if (se > kRoundoffFloor && step < se)
            out.diagnostic = fmt::format(
                "noise-dominated below eps={}: rung change {:.3e} is within the MC error {:.3e}",
                prev.epsilon, step, se);
    }
    out.selected = static_cast<int>(best);
    out.value = rungs[best].estimate.mean;
    out.std_error = rungs[best].estimate.std_error;
    out.rungs = std::move(rungs);
    return out;
}

template <class Units>
GateauxEstimate fd_impl(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                        const Stopped<Units>& policy, const Policy<Units>& direction, double x0,
                        const std::vector<double>& ladder)
{
    check_ladder(ladder);
    check_inputs(market, noise, policy.base.n_assets());
    if (direction.n_assets() != policy.base.n_assets())
        throw std::invalid_argument("gateaux_fd: direction asset count does not match the policy");

    std::vector<GateauxRung> rungs;
    if (is_zero_direction(direction)) {
        for (double e : ladder) rungs.push_back({e, {0.0, 0.0}, 0.0});
        auto out = select_rung(std::move(rungs), ladder);
        out.value = 0.0;
        out.std_error = 0.0;
        return out;
    }
    std::vector<double> diff(static_cast<std::size_t>(noise.n_paths()));
    for (double e : ladder) {
        const auto up = terminal_utilities(utility, market, noise, shifted(policy, direction, e), x0);
        const auto down = terminal_utilities(utility, market, noise, shifted(policy, direction, -e), x0);
        for (std::size_t p = 0; p < diff.size(); ++p) diff[p] = (up[p] - down[p]) / (2.0 * e);
        rungs.push_back({e, summarize(diff, noise.antithetic()), 0.0});
    }
    return select_rung(std::move(rungs), ladder);
}

}  // namespace

std::vector<double> terminal_utilities(const Utility& utility, const DiscreteMarket& market,
                                       const NoisePathSet& noise, const StoppedPolicy& policy, double x0)
{
    if (!(x0 > 0.0) || !std::isfinite(x0))
        throw std::invalid_argument("terminal_utilities: x0 must be positive under weight control");
    check_inputs(market, noise, policy.base.n_assets());
    std::vector<double> out(static_cast<std::size_t>(noise.n_paths()));
    detail::for_each_path(noise.n_paths(), [&](long p) {
        const double log_T =
            detail::walk_weight_path(market, noise, p, policy, x0, false, [](const detail::StepState&) {});
        out[static_cast<std::size_t>(p)] = utility_of_log_wealth(utility, log_T, p);
    });
    return out;
}

std::vector<double> terminal_utilities(const Utility& utility, const DiscreteMarket& market,
                                       const NoisePathSet& noise, const StoppedDollarPolicy& policy, double x0)
{
    if (!std::isfinite(x0)) throw std::invalid_argument("terminal_utilities: x0 must be finite");
    check_inputs(market, noise, policy.base.n_assets());
    std::vector<double> out(static_cast<std::size_t>(noise.n_paths()));
    detail::for_each_path(noise.n_paths(), [&](long p) {
        const double x_T = detail::walk_dollar_path(market, noise, p, policy, x0, [](const detail::StepState&) {});
        out[static_cast<std::size_t>(p)] = utility_of_wealth(utility, x_T, p);
    });
    return out;
}

McEstimate performance_criterion(const Utility& utility, const DiscreteMarket& market,
                                 const NoisePathSet& noise, const StoppedPolicy& policy, double x0)
{
    return summarize(terminal_utilities(utility, market, noise, policy, x0), noise.antithetic());
}

McEstimate performance_criterion(const Utility& utility, const DiscreteMarket& market,
                                 const NoisePathSet& noise, const StoppedDollarPolicy& policy, double x0)
{
    return summarize(terminal_utilities(utility, market, noise, policy, x0), noise.antithetic());
}

GateauxEstimate gateaux_fd(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                           const StoppedPolicy& policy, const PortfolioPolicy& direction, double x0,
                           const std::vector<double>& ladder)
{
    return fd_impl(utility, market, noise, policy, direction, x0, ladder);
}

GateauxEstimate gateaux_fd(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                           const StoppedDollarPolicy& policy, const DollarPolicy& direction, double x0,
                           const std::vector<double>& ladder)
{
    return fd_impl(utility, market, noise, policy, direction, x0, ladder);
}

namespace {

void check_solution(const DiscreteMarket& market, const BsdeSolution& solution, const char* who)
{
    if (solution.n_nodes() != market.grid().n_nodes() || solution.n_assets() != market.n_assets())
        throw std::invalid_argument(fmt::format("{}: BSDE solution does not match the market grid", who));
    if (solution.feature() == BsdeFeature::wealth)
        throw std::invalid_argument(fmt::format("{}: BSDE solution is for dollar control", who));
}

}  // namespace

GateauxEstimate gateaux_formula(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                                const StoppedPolicy& policy, const PortfolioPolicy& direction, double x0,
                                const BsdeSolution& solution)
{
    check_inputs(market, noise, policy.base.n_assets());
    check_solution(market, solution, "gateaux_formula");
    if (direction.n_assets() != policy.base.n_assets())
        throw std::invalid_argument("gateaux_formula: direction asset count does not match the policy");

    GateauxEstimate out;
    out.method = GateauxMethod::formula;
    if (is_zero_direction(direction)) return out;

    const double dt = market.grid().dt();
    std::vector<double> per_path(static_cast<std::size_t>(noise.n_paths()));
    detail::for_each_path(noise.n_paths(), [&](long p) {
        double acc = 0.0;
        detail::walk_weight_path(market, noise, p, policy, x0, true, [&](const detail::StepState& s) {
            if (s.stopped) return;
            const CoefficientBundle b = coefficient_bundle(utility, s.wealth);
            const double feat = bsde_feature(solution, s.regime, s.wealth);
            const Vec sigma = solution.sigma(s.k, feat);
            const Vec& pi = *s.control;
            const Vec omega = direction(s.t, s.wealth, s.regime);
            const Vec g = b.F1 * s.coef->theta + b.F2 * (s.coef->covariance * pi);
            acc += omega.dot(g + b.F1 * (s.coef->covariance * sigma)) * solution.y(s.k, feat) * dt;
        });
        per_path[static_cast<std::size_t>(p)] = acc;
    });
    const McEstimate e = summarize(per_path, noise.antithetic());
    out.value = e.mean;
    out.std_error = e.std_error;
    return out;
}

std::vector<PerturbationNode> perturbation_processes(const Utility& utility, const DiscreteMarket& market,
                                                     const NoisePathSet& noise, long path,
                                                     const StoppedPolicy& policy, const PortfolioPolicy& direction,
                                                     double x0)
{
    check_inputs(market, noise, policy.base.n_assets());
    if (path < 0 || path >= noise.n_paths()) throw std::out_of_range("perturbation_processes: bad path index");
    const double dt = market.grid().dt();
    std::vector<PerturbationNode> out;
    double I = 0.0;
    detail::walk_weight_path(market, noise, path, policy, x0, true, [&](const detail::StepState& s) {
        const CoefficientBundle b = coefficient_bundle(utility, s.wealth);
        const Vec& pi = *s.control;
        const auto& c = *s.coef;
        PerturbationNode node;
        node.t = s.t;
        node.F1 = b.F1;
        node.g = b.F1 * c.theta + b.F2 * (c.covariance * pi);
        const double quad = pi.dot(c.covariance * pi);
        node.h = (b.F1 + b.F2) * (c.rate + pi.dot(c.theta)) + (b.F2 + 0.5 * b.F3) * quad;
        node.q = b.F1 + b.F2;
        node.I_omega = I;
        node.stopped = s.stopped;
        out.push_back(std::move(node));
        if (!s.stopped) {
            const Vec omega = direction(s.t, s.wealth, s.regime);
            I += omega.dot(c.theta - c.covariance * pi) * dt + omega.dot(noise.increment_vec(path, s.k));
        }
    });
    PerturbationNode last;
    last.t = market.grid().horizon();
    last.g = Vec::Zero(market.n_assets());
    last.I_omega = I;
    last.stopped = !out.empty() && out.back().stopped;
    out.push_back(std::move(last));
    return out;
}

ExpansionCheck expansion_order_check(const Utility& utility, const DiscreteMarket& market,
                                     const NoisePathSet& noise, const StoppedPolicy& policy,
                                     const PortfolioPolicy& direction, double x0, const std::vector<double>& ladder)
{
    check_ladder(ladder);
    check_inputs(market, noise, policy.base.n_assets());
    ExpansionCheck out;
    out.ladder = ladder;
    if (is_zero_direction(direction)) {
        out.remainder.assign(ladder.size(), 0.0);
        out.slope = std::nan("");
        return out;
    }

    const long P = noise.n_paths();
    const double dt = market.grid().dt();
    std::vector<double> base(static_cast<std::size_t>(P));
    std::vector<double> d1(static_cast<std::size_t>(P));
    std::vector<double> integrated(static_cast<std::size_t>(P));
    detail::for_each_path(P, [&](long p) {
        double I = 0.0;
        double acc = 0.0;
        const double log_T = detail::walk_weight_path(market, noise, p, policy, x0, true, [&](const detail::StepState& s) {
            if (s.stopped) return;
            const CoefficientBundle b = coefficient_bundle(utility, s.wealth);
            const Vec& pi = *s.control;
            const auto& c = *s.coef;
            const Vec omega = direction(s.t, s.wealth, s.regime);
            const Vec g = b.F1 * c.theta + b.F2 * (c.covariance * pi);
            const double h =
                (b.F1 + b.F2) * (c.rate + pi.dot(c.theta)) + (b.F2 + 0.5 * b.F3) * pi.dot(c.covariance * pi);
            acc += (omega.dot(g) + I * h) * dt;
            I += omega.dot(c.theta - c.covariance * pi) * dt + omega.dot(noise.increment_vec(p, s.k));
        });
        const auto ps = static_cast<std::size_t>(p);
        base[ps] = utility_of_log_wealth(utility, log_T, p);
        d1[ps] = coefficient_bundle(utility, std::exp(log_T)).F1 * I;
        integrated[ps] = acc;
    });
    const McEstimate H = summarize(base, noise.antithetic());
    out.first_order = summarize(d1, noise.antithetic()).mean;
    out.integrated_first_order = summarize(integrated, noise.antithetic()).mean;

    std::vector<double> xs;
    std::vector<double> ys;
    const double floor = 1e3 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(H.mean));
    for (double e : ladder) {
        const auto up = terminal_utilities(utility, market, noise, shifted(policy, direction, e), x0);
        // Pathwise differences first: keeps the remainder free of the level's roundoff.
        double acc = 0.0;
        for (std::size_t p = 0; p < up.size(); ++p) acc += (up[p] - base[p]) - e * d1[p];
        const double R = acc / static_cast<double>(up.size());
        out.remainder.push_back(R);
        if (std::abs(R) > floor) {
            xs.push_back(std::log(e));
            ys.push_back(std::log(std::abs(R)));
        }
    }
    if (xs.size() < 2)
        throw NumericalError(fmt::format("expansion_order_check: only {} rung(s) above the noise floor {:.3e}",
                                         xs.size(), floor));
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    out.slope = sxy / sxx;
    return out;
}

MhatCheck mhat_martingale_check(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                                const StoppedPolicy& policy, const BsdeSolution& solution, double x0,
                                int n_check_nodes)
{
    check_inputs(market, noise, policy.base.n_assets());
    check_solution(market, solution, "mhat_martingale_check");
    if (n_check_nodes < 1) throw std::invalid_argument("mhat_martingale_check: need at least one node");

    const int N = market.grid().n_steps();
    const double dt = market.grid().dt();
    std::vector<int> nodes;
    for (int j = 0; j < n_check_nodes; ++j) {
        const int k = static_cast<int>(std::lround(static_cast<double>(j) * N / n_check_nodes));
        if (nodes.empty() || nodes.back() != k) nodes.push_back(k);
    }
    const std::size_t m = nodes.size();
    const long P = noise.n_paths();
    // D at each checked node minus D_T, per path.
    std::vector<double> diff(static_cast<std::size_t>(P) * m);

    detail::for_each_path(P, [&](long p) {
        double H = 0.0;
        std::vector<double> d(m, 0.0);
        std::size_t next = 0;
        detail::walk_weight_path(market, noise, p, policy, x0, true, [&](const detail::StepState& s) {
            const CoefficientBundle b = coefficient_bundle(utility, s.wealth);
            if (next < m && nodes[next] == s.k) {
                const double feat = bsde_feature(solution, s.regime, s.wealth);
                d[next++] = b.F1 * (solution.y(s.k, feat) - 1.0) + H;
            }
            if (s.stopped) return;
            const Vec& pi = *s.control;
            const auto& c = *s.coef;
            H += ((b.F1 + b.F2) * (c.rate + pi.dot(c.theta)) + (b.F2 + 0.5 * b.F3) * pi.dot(c.covariance * pi)) * dt;
        });
        for (std::size_t j = 0; j < m; ++j) diff[static_cast<std::size_t>(p) * m + j] = d[j] - H;
    });

    MhatCheck out;
    std::vector<double> column(static_cast<std::size_t>(P));
    for (std::size_t j = 0; j < m; ++j) {
        for (long p = 0; p < P; ++p) column[static_cast<std::size_t>(p)] = diff[static_cast<std::size_t>(p) * m + j];
        MhatNode node;
        node.node = nodes[j];
        node.deviation = summarize(column, noise.antithetic());
        const double dev = std::abs(node.deviation.mean);
        if (dev <= kRoundoffFloor)
            node.se_units = 0.0;
        else
            node.se_units = node.deviation.std_error > 0.0 ? dev / node.deviation.std_error
                                                           : std::numeric_limits<double>::infinity();
        out.max_se_units = std::max(out.max_se_units, node.se_units);
        out.nodes.push_back(node);
    }
    return out;
}

}  // namespace merton
