#pragma once

#include "merton/market_model.hpp"

#include <cmath>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace merton {

struct WeightUnits {};
struct DollarUnits {};

/// A control emitting one value per risky asset at each grid node. The
/// Units tag distinguishes fractions of wealth from currency amounts.
template <class Units>
class Policy {
public:
    enum class Kind { constant, time_function, feedback };
    using TimeFn = std::function<Vec(double t)>;
    using FeedbackFn = std::function<Vec(double t, double wealth, int regime)>;

    static Policy constant(Vec value)
    {
        Policy p;
        p.kind_ = Kind::constant;
        p.n_ = static_cast<int>(value.size());
        p.constant_ = std::move(value);
        return p;
    }

    static Policy time_function(int n_assets, TimeFn fn)
    {
        Policy p;
        p.kind_ = Kind::time_function;
        p.n_ = n_assets;
        p.fn_ = [f = std::move(fn)](double t, double, int) { return f(t); };
        return p;
    }

    static Policy feedback(int n_assets, FeedbackFn fn)
    {
        Policy p;
        p.kind_ = Kind::feedback;
        p.n_ = n_assets;
        p.fn_ = std::move(fn);
        return p;
    }

    /// ca·a + cb·b, staying constant when both inputs are.
    static Policy combine(const Policy& a, double ca, const Policy& b, double cb)
    {
        if (a.n_ != b.n_) throw std::invalid_argument("policy: asset count mismatch");
        if (a.kind_ == Kind::constant && b.kind_ == Kind::constant)
            return constant(ca * a.constant_ + cb * b.constant_);
        const Kind kind = (a.kind_ == Kind::feedback || b.kind_ == Kind::feedback) ? Kind::feedback
                                                                                   : Kind::time_function;
        Policy p;
        p.kind_ = kind;
        p.n_ = a.n_;
        p.fn_ = [a, ca, b, cb](double t, double x, int reg) { return Vec(ca * a(t, x, reg) + cb * b(t, x, reg)); };
        return p;
    }

    Kind kind() const { return kind_; }
    bool is_deterministic() const { return kind_ != Kind::feedback; }
    int n_assets() const { return n_; }
    const Vec& constant_value() const { return constant_; }

    Vec operator()(double t, double wealth, int regime = 0) const
    {
        return kind_ == Kind::constant ? constant_ : fn_(t, wealth, regime);
    }

private:
    Policy() = default;

    Kind kind_ = Kind::constant;
    int n_ = 0;
    Vec constant_;
    FeedbackFn fn_;
};

using PortfolioPolicy = Policy<WeightUnits>;
using DollarPolicy = Policy<DollarUnits>;

/// K-stopped wrapper: once |X| > K at a node, the control is zero from that
/// node on and wealth accrues at the short rate only.
template <class Units>
struct Stopped {
    Policy<Units> base;
    double threshold = kDefaultStopThreshold;

    Stopped(Policy<Units> p, double K = kDefaultStopThreshold) : base(std::move(p)), threshold(K)
    {
        if (!(K > 0.0)) throw std::invalid_argument("stop threshold K must be positive");
    }
};

using StoppedPolicy = Stopped<WeightUnits>;
using StoppedDollarPolicy = Stopped<DollarUnits>;

/// Simulated wealth on every path and node.
struct WealthPath {
    long n_paths = 0;
    int n_nodes = 0;
    int n_assets = 0;
    std::vector<double> wealth;       // [path][node]
    std::vector<double> log_wealth;   // [path][node], NaN where wealth <= 0
    std::vector<int> stop_step;       // first node with |X| > K, or -1
    std::vector<double> growth_rate;  // [path][step], γ^π (weights) or NaN (dollars)
    std::vector<double> controls;     // [path][step][asset], as emitted

    double x(long p, int k) const { return wealth[idx(p, k)]; }
    double log_x(long p, int k) const { return log_wealth[idx(p, k)]; }
    double control(long p, int k, int i) const
    {
        return controls[(static_cast<std::size_t>(p) * (n_nodes - 1) + k) * n_assets + i];
    }
    std::optional<int> stopped_at(long p) const
    {
        const int s = stop_step[static_cast<std::size_t>(p)];
        return s < 0 ? std::nullopt : std::optional<int>(s);
    }

private:
    std::size_t idx(long p, int k) const { return static_cast<std::size_t>(p) * n_nodes + k; }
};

/// Weight control, log-Euler: log X_{k+1} = log X_k + γ_k dt + π_kᵀΔM_k with
/// γ = r + πᵀθ − ½πᵀΣπ. Stopping is checked at each node before stepping.
WealthPath simulate_wealth_weights(const DiscreteMarket& market, const NoisePathSet& noise,
                                   const StoppedPolicy& policy, double x0);

/// Dollar control, Euler: X_{k+1} = X_k + (r X_k + π̃ᵀθ)dt + π̃ᵀΔM_k.
/// Linear in the control for a fixed noise path; wealth may change sign.
WealthPath simulate_wealth_dollars(const DiscreteMarket& market, const NoisePathSet& noise,
                                   const StoppedDollarPolicy& policy, double x0);

/// κ_{s,t} = exp(−∫_s^t r_u du).
double discount_factor(const DiscreteMarket& market, double s, double t, int regime = 0);

/// First index with |X| > K (strict), if any.
std::optional<int> detect_stop(std::span<const double> wealth, double threshold_K);

/// CSV with columns path_id,step,t,X,logX,stopped.
void write_wealth_csv(std::ostream& out, const WealthPath& path, const TimeGrid& grid);

namespace detail {

/// State handed to a path visitor at node k, before the step to k+1.
struct StepState {
    int k;
    double t;
    double wealth;      // NaN under weight control unless the policy is feedback
    double log_wealth;  // NaN under dollar control when wealth <= 0
    bool stopped;
    int regime;
    const NodeCoefficients* coef;
    const Vec* control;
    double growth;      // γ^π for weights
};

inline void require_finite(const Vec& v, long path, int k)
{
    if (!v.allFinite())
        throw DomainError("policy emitted a non-finite control at path " + std::to_string(path) +
                              ", step " + std::to_string(k),
                          path);
}

/// Walks one weight-controlled path; returns terminal log-wealth. The
/// visitor sees every node k < N. `need_wealth` forces exp(log X) per node.
template <class Visitor>
double walk_weight_path(const DiscreteMarket& market, const NoisePathSet& noise, long path,
                        const StoppedPolicy& policy, double x0, bool need_wealth, Visitor&& visit)
{
    const auto& grid = market.grid();
    const double dt = grid.dt();
    const double log_K = std::log(policy.threshold);
    const bool feedback = policy.base.kind() == PortfolioPolicy::Kind::feedback;
    const bool constant = policy.base.kind() == PortfolioPolicy::Kind::constant;
    const int n = market.n_assets();

    double log_x = std::log(x0);
    bool stopped = false;
    Vec pi(n);
    if (constant) pi = policy.base.constant_value();
    for (int k = 0; k < grid.n_steps(); ++k) {
        const int reg = noise.regime(path, k);
        const auto& c = market.at(k, reg);
        const double t = grid.node(k);
        if (!stopped && log_x > log_K) {
            stopped = true;
            pi.setZero();
        }
        const double x = (need_wealth || feedback) ? std::exp(log_x) : std::nan("");
        if (!stopped && !constant) {
            pi = policy.base(t, x, reg);
            require_finite(pi, path, k);
        }
        const double growth = c.rate + pi.dot(c.theta) - 0.5 * pi.dot(c.covariance * pi);
        visit(StepState{k, t, x, log_x, stopped, reg, &c, &pi, growth});
        log_x += growth * dt + pi.dot(noise.increment_vec(path, k));
    }
    return log_x;
}

/// Walks one dollar-controlled path; returns terminal wealth.
template <class Visitor>
double walk_dollar_path(const DiscreteMarket& market, const NoisePathSet& noise, long path,
                        const StoppedDollarPolicy& policy, double x0, Visitor&& visit)
{
    const auto& grid = market.grid();
    const double dt = grid.dt();
    const bool constant = policy.base.kind() == DollarPolicy::Kind::constant;
    const int n = market.n_assets();

    double x = x0;
    bool stopped = false;
    Vec u(n);
    if (constant) u = policy.base.constant_value();
    for (int k = 0; k < grid.n_steps(); ++k) {
        const int reg = noise.regime(path, k);
        const auto& c = market.at(k, reg);
        const double t = grid.node(k);
        if (!stopped && std::abs(x) > policy.threshold) {
            stopped = true;
            u.setZero();
        }
        if (!stopped && !constant) {
            u = policy.base(t, x, reg);
            require_finite(u, path, k);
        }
        visit(StepState{k, t, x, x > 0.0 ? std::log(x) : std::nan(""), stopped, reg, &c, &u,
                        std::nan("")});
        x += (c.rate * x + u.dot(c.theta)) * dt + u.dot(noise.increment_vec(path, k));
    }
    return x;
}

}  // namespace detail

}  // namespace merton
