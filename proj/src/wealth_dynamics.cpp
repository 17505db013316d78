#include "merton/wealth_dynamics.hpp"

#include "merton/parallel.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <ostream>

namespace merton {

namespace {

void check_shapes(const DiscreteMarket& market, const NoisePathSet& noise, int policy_assets)
{
    if (noise.n_assets() != market.n_assets() || noise.n_steps() != market.grid().n_steps())
        throw std::invalid_argument("wealth: noise shape does not match the market grid");
    if (policy_assets != market.n_assets())
        throw std::invalid_argument("wealth: policy asset count does not match the market");
}

WealthPath allocate(const DiscreteMarket& market, const NoisePathSet& noise)
{
    WealthPath w;
    w.n_paths = noise.n_paths();
    w.n_nodes = market.grid().n_nodes();
    w.n_assets = market.n_assets();
    const auto nodes = static_cast<std::size_t>(w.n_paths) * w.n_nodes;
    const auto steps = static_cast<std::size_t>(w.n_paths) * (w.n_nodes - 1);
    w.wealth.resize(nodes);
    w.log_wealth.resize(nodes);
    w.stop_step.assign(static_cast<std::size_t>(w.n_paths), -1);
    w.growth_rate.resize(steps);
    w.controls.resize(steps * w.n_assets);
    return w;
}

}  // namespace

WealthPath simulate_wealth_weights(const DiscreteMarket& market, const NoisePathSet& noise,
                                   const StoppedPolicy& policy, double x0)
{
    if (!(x0 > 0.0) || !std::isfinite(x0))
        throw std::invalid_argument("wealth: x0 must be positive under weight control");
    check_shapes(market, noise, policy.base.n_assets());
    WealthPath w = allocate(market, noise);
    const int N = market.grid().n_steps();
    const int n = market.n_assets();
    const double log_K = std::log(policy.threshold);

    detail::for_each_path(w.n_paths, [&](long p) {
        const std::size_t row = static_cast<std::size_t>(p) * w.n_nodes;
        const std::size_t srow = static_cast<std::size_t>(p) * N;
        const double log_T = detail::walk_weight_path(
            market, noise, p, policy, x0, true, [&](const detail::StepState& s) {
                w.log_wealth[row + s.k] = s.log_wealth;
                w.wealth[row + s.k] = s.wealth;
                w.growth_rate[srow + s.k] = s.growth;
                for (int i = 0; i < n; ++i) w.controls[(srow + s.k) * n + i] = (*s.control)[i];
                if (s.stopped && w.stop_step[static_cast<std::size_t>(p)] < 0)
                    w.stop_step[static_cast<std::size_t>(p)] = s.k;
            });
        w.log_wealth[row + N] = log_T;
        w.wealth[row + N] = std::exp(log_T);
        if (w.stop_step[static_cast<std::size_t>(p)] < 0 && log_T > log_K)
            w.stop_step[static_cast<std::size_t>(p)] = N;
    });
    return w;
}

WealthPath simulate_wealth_dollars(const DiscreteMarket& market, const NoisePathSet& noise,
                                   const StoppedDollarPolicy& policy, double x0)
{
    if (!std::isfinite(x0)) throw std::invalid_argument("wealth: x0 must be finite");
    check_shapes(market, noise, policy.base.n_assets());
    WealthPath w = allocate(market, noise);
    const int N = market.grid().n_steps();
    const int n = market.n_assets();

    detail::for_each_path(w.n_paths, [&](long p) {
        const std::size_t row = static_cast<std::size_t>(p) * w.n_nodes;
        const std::size_t srow = static_cast<std::size_t>(p) * N;
        const double x_T = detail::walk_dollar_path(
            market, noise, p, policy, x0, [&](const detail::StepState& s) {
                w.wealth[row + s.k] = s.wealth;
                w.log_wealth[row + s.k] = s.log_wealth;
                w.growth_rate[srow + s.k] = s.growth;
                for (int i = 0; i < n; ++i) w.controls[(srow + s.k) * n + i] = (*s.control)[i];
                if (s.stopped && w.stop_step[static_cast<std::size_t>(p)] < 0)
                    w.stop_step[static_cast<std::size_t>(p)] = s.k;
            });
        w.wealth[row + N] = x_T;
        w.log_wealth[row + N] = x_T > 0.0 ? std::log(x_T) : std::nan("");
        if (w.stop_step[static_cast<std::size_t>(p)] < 0 && std::abs(x_T) > policy.threshold)
            w.stop_step[static_cast<std::size_t>(p)] = N;
    });
    return w;
}

double discount_factor(const DiscreteMarket& market, double s, double t, int regime)
{
    return std::exp(-(market.integrated_rate(t, regime) - market.integrated_rate(s, regime)));
}

std::optional<int> detect_stop(std::span<const double> wealth, double threshold_K)
{
    if (!(threshold_K > 0.0)) throw std::invalid_argument("detect_stop: K must be positive");
    for (std::size_t k = 0; k < wealth.size(); ++k)
        if (std::abs(wealth[k]) > threshold_K) return static_cast<int>(k);
    return std::nullopt;
}

void write_wealth_csv(std::ostream& out, const WealthPath& w, const TimeGrid& grid)
{
    out << "path_id,step,t,X,logX,stopped\n";
    for (long p = 0; p < w.n_paths; ++p) {
        const int s = w.stop_step[static_cast<std::size_t>(p)];
        for (int k = 0; k < w.n_nodes; ++k) {
            const bool stopped = s >= 0 && k >= s;
            out << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{}\n", p, k, grid.node(k), w.x(p, k),
                               w.log_x(p, k), stopped ? 1 : 0);
        }
    }
}

}  // namespace merton
