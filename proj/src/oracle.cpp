#include "merton/oracle.hpp"

#include "merton/variational.hpp"

#include <fmt/format.h>

#include <cmath>

namespace merton {

OptimalControl closed_form_policy(const Utility& utility, const DiscreteMarket& market)
{
    if (!market.is_constant())
        throw std::invalid_argument("closed_form_policy: market coefficients must be constant");
    const auto& c = market.at(0);
    switch (utility.kind()) {
    case UtilityKind::log: return PortfolioPolicy::constant(c.sigma_inv_theta);
    case UtilityKind::power: return PortfolioPolicy::constant(c.sigma_inv_theta / (1.0 - utility.eta()));
    case UtilityKind::exponential:
        if (c.rate != 0.0)
            throw std::invalid_argument(
                "closed_form_policy: exponential utility needs r = 0 (use solve_fbsde_exponential otherwise)");
        return DollarPolicy::constant(c.sigma_inv_theta / utility.gamma());
    case UtilityKind::custom: break;
    }
    throw std::invalid_argument("closed_form_policy: no closed form for " + utility.name());
}

namespace {

std::vector<Vec> grid_points(const SearchSpec& spec, int n)
{
    if (spec.lower.size() != n || spec.upper.size() != n)
        throw std::invalid_argument("grid_search: box dimension does not match the market");
    if (!(spec.step > 0.0) || !std::isfinite(spec.step))
        throw std::invalid_argument("grid_search: grid step must be positive");
    if (!spec.lower.allFinite() || !spec.upper.allFinite())
        throw std::invalid_argument("grid_search: box must be finite");
    std::vector<int> counts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        if (spec.upper[i] < spec.lower[i]) throw std::invalid_argument("grid_search: upper < lower");
        // Tolerate the box edge landing a rounding error off the lattice.
        counts[static_cast<std::size_t>(i)] =
            static_cast<int>(std::floor((spec.upper[i] - spec.lower[i]) / spec.step + 1e-9)) + 1;
    }
    std::vector<Vec> pts;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (true) {
        Vec v(n);
        for (int i = 0; i < n; ++i) v[i] = spec.lower[i] + idx[static_cast<std::size_t>(i)] * spec.step;
        pts.push_back(v);
        int i = n - 1;
        while (i >= 0 && ++idx[static_cast<std::size_t>(i)] == counts[static_cast<std::size_t>(i)]) {
            idx[static_cast<std::size_t>(i)] = 0;
            --i;
        }
        if (i < 0) break;
    }
    return pts;
}

std::vector<double> values_at(const Utility& u, const DiscreteMarket& market, const NoisePathSet& noise,
                              PolicyUnits units, const Vec& policy, double K, double x0)
{
    if (units == PolicyUnits::weights)
        return terminal_utilities(u, market, noise, StoppedPolicy(PortfolioPolicy::constant(policy), K), x0);
    return terminal_utilities(u, market, noise, StoppedDollarPolicy(DollarPolicy::constant(policy), K), x0);
}

}  // namespace

SearchResult grid_search(const Utility& utility, const DiscreteMarket& market, const SearchSpec& spec, double x0)
{
    const int n = market.n_assets();
    if (n > kMaxSearchAssets)
        throw std::invalid_argument(
            fmt::format("grid_search: at most {} assets (got {}); use gradient ascent", kMaxSearchAssets, n));
    if (spec.n_paths < 2) throw std::invalid_argument("grid_search: need at least 2 paths");
    if (spec.antithetic && spec.n_paths % 2 != 0)
        throw std::invalid_argument("grid_search: antithetic sampling needs an even path count");
    if (spec.units == PolicyUnits::dollars && utility.kind() != UtilityKind::exponential &&
        utility.kind() != UtilityKind::custom)
        throw std::invalid_argument("grid_search: dollar policies need a utility defined on all reals");

    const auto pts = grid_points(spec, n);
    const NoiseOptions opts{spec.antithetic};
    const NoisePathSet shared = sample_noise(market, spec.seed, spec.n_paths, opts);

    SearchResult out;
    for (std::size_t j = 0; j < pts.size(); ++j) {
        const NoisePathSet own = spec.crn ? NoisePathSet{} : sample_noise(market, spec.seed + j, spec.n_paths, opts);
        const NoisePathSet& ns = spec.crn ? shared : own;
        const auto v = values_at(utility, market, ns, spec.units, pts[j], spec.threshold_K, x0);
        out.points.push_back({pts[j], summarize(v, spec.antithetic)});
    }
    for (std::size_t j = 0; j < out.points.size(); ++j) {
        const int jj = static_cast<int>(j);
        if (out.argmax < 0 || out.points[j].value.mean > out.points[static_cast<std::size_t>(out.argmax)].value.mean) {
            out.runner_up = out.argmax;
            out.argmax = jj;
        } else if (out.runner_up < 0 ||
                   out.points[j].value.mean > out.points[static_cast<std::size_t>(out.runner_up)].value.mean) {
            out.runner_up = jj;
        }
    }
    if (out.runner_up < 0) return out;

    const auto& best = out.points[static_cast<std::size_t>(out.argmax)];
    const auto& second = out.points[static_cast<std::size_t>(out.runner_up)];
    if (spec.crn) {
        const auto a = values_at(utility, market, shared, spec.units, best.policy, spec.threshold_K, x0);
        const auto b = values_at(utility, market, shared, spec.units, second.policy, spec.threshold_K, x0);
        std::vector<double> d(a.size());
        for (std::size_t p = 0; p < a.size(); ++p) d[p] = a[p] - b[p];
        out.gap = summarize(d, spec.antithetic);
    } else {
        out.gap = {best.value.mean - second.value.mean, std::hypot(best.value.std_error, second.value.std_error)};
    }
    out.inconclusive = !(out.gap.mean > out.gap.std_error);
    return out;
}

ConcavityWitness concavity_midpoint(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                                    const Vec& a, const Vec& b, double x0, double slack_se)
{
    if (a.size() != market.n_assets() || b.size() != market.n_assets())
        throw std::invalid_argument("concavity_midpoint: endpoint dimension does not match the market");
    const Vec m = 0.5 * (a + b);
    const auto ua = values_at(utility, market, noise, PolicyUnits::dollars, a, kDefaultStopThreshold, x0);
    const auto ub = values_at(utility, market, noise, PolicyUnits::dollars, b, kDefaultStopThreshold, x0);
    const auto um = values_at(utility, market, noise, PolicyUnits::dollars, m, kDefaultStopThreshold, x0);
    std::vector<double> d(ua.size());
    for (std::size_t p = 0; p < d.size(); ++p) d[p] = um[p] - 0.5 * ua[p] - 0.5 * ub[p];
    ConcavityWitness w;
    w.defect = summarize(d, noise.antithetic());
    w.pass = w.defect.mean >= -slack_se * w.defect.std_error - kRoundoffFloor;
    return w;
}

AscentResult gradient_ascent(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                             const Vec& start, double x0, AscentOptions options)
{
    if (!utility.is_scale_invariant())
        throw std::invalid_argument("gradient_ascent: needs a log or power utility");
    if (start.size() != market.n_assets())
        throw std::invalid_argument("gradient_ascent: start dimension does not match the market");
    if (options.max_iters < 0 || !(options.tol > 0.0))
        throw std::invalid_argument("gradient_ascent: invalid options");

    const int n = market.n_assets();
    AscentResult out;
    out.step = options.step > 0.0 ? options.step
                                   : 0.5 / (market.model().ellipticity_C() * market.grid().horizon());
    Vec pi = start;
    for (int it = 0; it <= options.max_iters; ++it) {
        AscentIterate iter;
        iter.policy = pi;
        iter.gradient = Vec::Zero(n);
        try {
            const auto policy = PortfolioPolicy::constant(pi);
            const StoppedPolicy stopped(policy, options.threshold_K);
            const BsdeSolution sol = solve_bsde_for_policy(utility, market, policy);
            for (int i = 0; i < n; ++i) {
                Vec e = Vec::Zero(n);
                e[i] = 1.0;
                iter.gradient[i] =
                    gateaux_formula(utility, market, noise, stopped, PortfolioPolicy::constant(e), x0, sol).value;
            }
            iter.value = performance_criterion(utility, market, noise, stopped, x0);
        } catch (const DomainError& e) {
            throw DomainError(fmt::format("gradient_ascent diverged at iterate {} (policy {}): {}", it,
                                          fmt::join(pi.data(), pi.data() + n, ","), e.what()),
                              e.path());
        }
        out.trajectory.push_back(iter);
        if (iter.gradient.norm() < options.tol) {
            out.converged = true;
            break;
        }
        if (!iter.gradient.allFinite())
            throw NumericalError(fmt::format("gradient_ascent: non-finite gradient at iterate {}", it));
        pi += out.step * iter.gradient;
    }
    return out;
}

}  // namespace merton
