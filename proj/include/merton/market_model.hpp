#pragma once

#include "merton/types.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace merton {

/// Market coefficients at one instant: short rate r, drift α and the
/// quadratic covariation rate Σ of the noise (all per year).
struct Coefficients {
    double rate = 0.0;
    Vec drift;
    Mat covariance;

    /// θ = α − r·1
    Vec excess_return() const { return drift - Vec::Constant(drift.size(), rate); }
};

using CoefficientFn = std::function<Coefficients(double t)>;

/// Everything needed to build a MarketModel. One entry in `regimes` means
/// deterministic time-dependent coefficients; more entries switch between
/// coefficient sets following an independent Markov chain with intensity
/// matrix `generator` (per year).
struct MarketSpec {
    int n_assets = 1;
    std::vector<CoefficientFn> regimes;
    Eigen::MatrixXd generator;
    int initial_regime = 0;

    double bound_M = 1.0;
    double ellipticity_eps = 1.0e-6;
    double ellipticity_C = 1.0e6;
    Vec initial_prices;  // defaults to ones
    double horizon = 1.0;
    int validation_points = 2501;
};

/// Constant coefficients r, α, Σ.
MarketSpec constant_market_spec(double rate, const Vec& drift, const Mat& covariance);

/// Validated market. Immutable once built.
class MarketModel {
public:
    int n_assets() const { return n_assets_; }
    int n_regimes() const { return static_cast<int>(regimes_.size()); }
    bool is_modulated() const { return n_regimes() > 1; }

    Coefficients coefficients(double t, int regime = 0) const;
    Vec excess_return(double t, int regime = 0) const { return coefficients(t, regime).excess_return(); }

    const Eigen::MatrixXd& generator() const { return generator_; }
    int initial_regime() const { return initial_regime_; }
    double bound_M() const { return bound_M_; }
    double ellipticity_eps() const { return eps_; }
    double ellipticity_C() const { return C_; }
    const Vec& initial_prices() const { return initial_prices_; }
    double horizon() const { return horizon_; }

private:
    friend MarketModel build_market(const MarketSpec& spec);
    MarketModel() = default;

    int n_assets_ = 0;
    std::vector<CoefficientFn> regimes_;
    Eigen::MatrixXd generator_;
    int initial_regime_ = 0;
    double bound_M_ = 0.0;
    double eps_ = 0.0;
    double C_ = 0.0;
    Vec initial_prices_;
    double horizon_ = 0.0;
};

/// Validates the coefficient bounds (|r|, |α_i| ≤ M; Σ symmetric with
/// spectrum in [ε, C]) on `validation_points` equally spaced times in
/// [0, horizon] for every regime. Throws std::invalid_argument.
MarketModel build_market(const MarketSpec& spec);

/// Checks one coefficient sample against the model's bounds; throws
/// std::invalid_argument describing the first violation.
void check_coefficients(const Coefficients& c, int n_assets, double bound_M, double eps, double C,
                        double t);

/// Uniform discretization of [0, T].
class TimeGrid {
public:
    TimeGrid(double horizon, int n_steps);

    double horizon() const { return horizon_; }
    int n_steps() const { return n_steps_; }
    int n_nodes() const { return n_steps_ + 1; }
    double dt() const { return dt_; }
    double node(int k) const { return k == n_steps_ ? horizon_ : k * dt_; }

private:
    double horizon_;
    int n_steps_;
    double dt_;
};

/// Coefficients frozen at one grid node, with the factorizations the
/// simulators and solvers need.
struct NodeCoefficients {
    double rate = 0.0;
    Vec theta;
    Mat covariance;
    Mat cholesky;         // lower factor, L Lᵀ = Σ
    Eigen::LDLT<Mat> ldlt;  // used for Σ⁻¹ solves
    Vec sigma_inv_theta;  // Σ⁻¹θ
    double theta_sigma_inv_theta = 0.0;

    Vec solve(const Vec& b) const;  // Σ⁻¹ b
};

/// A market evaluated on a time grid, per regime.
class DiscreteMarket {
public:
    DiscreteMarket(MarketModel model, TimeGrid grid);

    const MarketModel& model() const { return model_; }
    const TimeGrid& grid() const { return grid_; }
    int n_assets() const { return model_.n_assets(); }
    int n_regimes() const { return model_.n_regimes(); }

    const NodeCoefficients& at(int node, int regime = 0) const
    {
        return nodes_[static_cast<std::size_t>(regime) * grid_.n_nodes() + node];
    }

    /// Single regime and identical coefficients at every node.
    bool is_constant() const { return constant_; }

    /// One-step regime transition matrix exp(Q dt).
    const Eigen::MatrixXd& transition() const { return transition_; }

    /// ∫_0^t r_u du for a fixed regime, left-endpoint rule on the grid
    /// (exactly additive, matching the simulation schemes).
    double integrated_rate(double t, int regime = 0) const;

private:
    MarketModel model_;
    TimeGrid grid_;
    std::vector<NodeCoefficients> nodes_;
    Eigen::MatrixXd transition_;
    bool constant_ = false;
    std::vector<double> cumulative_rate_;  // per regime, per node
};

struct NoiseOptions {
    /// Paths 2j and 2j+1 use ±ξ and share one regime path.
    bool antithetic = false;
};

/// Martingale increments ΔM[path][step][asset] and, for modulated markets,
/// the regime index at every node.
class NoisePathSet {
public:
    NoisePathSet() = default;

    /// Wraps caller-supplied increments (path-major, then step, then asset).
    static NoisePathSet from_increments(long n_paths, int n_steps, int n_assets,
                                        std::vector<double> increments);

    std::uint64_t seed() const { return seed_; }
    long n_paths() const { return n_paths_; }
    int n_steps() const { return n_steps_; }
    int n_assets() const { return n_assets_; }
    bool antithetic() const { return antithetic_; }
    bool has_regimes() const { return !regimes_.empty(); }

    std::span<const double> increment(long path, int step) const
    {
        return {increments_.data() + offset(path, step), static_cast<std::size_t>(n_assets_)};
    }
    Eigen::Map<const Eigen::VectorXd> increment_vec(long path, int step) const
    {
        return {increments_.data() + offset(path, step), n_assets_};
    }
    int regime(long path, int node) const
    {
        return regimes_.empty() ? 0 : regimes_[static_cast<std::size_t>(path) * (n_steps_ + 1) + node];
    }

private:
    friend NoisePathSet sample_noise(const DiscreteMarket&, std::uint64_t, long, NoiseOptions);

    std::size_t offset(long path, int step) const
    {
        return (static_cast<std::size_t>(path) * n_steps_ + step) * n_assets_;
    }

    std::uint64_t seed_ = 0;
    long n_paths_ = 0;
    int n_steps_ = 0;
    int n_assets_ = 0;
    bool antithetic_ = false;
    std::vector<double> increments_;
    std::vector<std::uint8_t> regimes_;
};

/// ΔM_k = L_k √dt ξ with L_k L_kᵀ = Σ_{t_k}. Path p draws from a stream
/// seeded by (seed, p) only, so output is independent of thread scheduling.
NoisePathSet sample_noise(const DiscreteMarket& market, std::uint64_t seed, long n_paths,
                          NoiseOptions options = {});

/// Simulated prices. Risky prices are [path][node][asset]; the riskless
/// leg is [path][node] (it depends on the regime path when modulated).
struct PricePaths {
    long n_paths = 0;
    int n_nodes = 0;
    int n_assets = 0;
    std::vector<double> risky;
    std::vector<double> riskless;

    double price(long path, int node, int asset) const
    {
        return risky[(static_cast<std::size_t>(path) * n_nodes + node) * n_assets + asset];
    }
    double bank(long path, int node) const
    {
        return riskless[static_cast<std::size_t>(path) * n_nodes + node];
    }
};

/// Log-Euler recursion log P_{k+1} = log P_k + (α − ½Σ_ii)dt + ΔM and
/// P⁰_{k+1} = P⁰_k e^{r dt}, P⁰_0 = 1.
PricePaths simulate_asset_prices(const DiscreteMarket& market, const NoisePathSet& noise);

}  // namespace merton
