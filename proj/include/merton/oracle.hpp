#pragma once

#include "merton/fbsde.hpp"
#include "merton/market_model.hpp"
#include "merton/stats.hpp"
#include "merton/utility.hpp"

#include <cstdint>
#include <vector>

namespace merton {

/// log → Σ⁻¹θ, power(η) → Σ⁻¹θ/(1−η) (weights); exponential(γ) with r ≡ 0
/// → Σ⁻¹θ/γ (dollars). Constant coefficients only.
OptimalControl closed_form_policy(const Utility& utility, const DiscreteMarket& market);

enum class PolicyUnits { weights, dollars };

/// Box [lower, upper] per asset with spacing `step`, evaluated on one
/// shared noise set (common random numbers) unless `crn` is false.
struct SearchSpec {
    PolicyUnits units = PolicyUnits::weights;
    Vec lower;
    Vec upper;
    double step = 0.05;
    long n_paths = 10000;
    std::uint64_t seed = 1;
    bool crn = true;
    bool antithetic = true;
    double threshold_K = kDefaultStopThreshold;
};

struct SearchPoint {
    Vec policy;
    McEstimate value;
};

struct SearchResult {
    std::vector<SearchPoint> points;
    int argmax = -1;
    int runner_up = -1;     // -1 with a single grid point
    McEstimate gap;         // paired value(argmax) − value(runner_up)
    bool inconclusive = false;  // gap within one SE
};

inline constexpr int kMaxSearchAssets = 3;

SearchResult grid_search(const Utility& utility, const DiscreteMarket& market, const SearchSpec& spec, double x0);

/// Midpoint test along the dollar segment [a, b]: the paired defect
/// U(X^m) − ½U(X^a) − ½U(X^b) has mean ≥ −slack·SE.
struct ConcavityWitness {
    McEstimate defect;
    bool pass = false;
};

ConcavityWitness concavity_midpoint(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                                    const Vec& a, const Vec& b, double x0, double slack_se = 2.0);

struct AscentOptions {
    double step = 0.0;  // 0 selects 0.5/(C·T)
    double tol = 1e-4;  // on ‖∇‖
    int max_iters = 200;
    double threshold_K = kDefaultStopThreshold;
};

struct AscentIterate {
    Vec policy;
    Vec gradient;
    McEstimate value;
};

struct AscentResult {
    std::vector<AscentIterate> trajectory;  // last entry is where it stopped
    bool converged = false;
    double step = 0.0;
};

/// π ← π + step·∇ over constant weights, ∇_i = formula derivative in the
/// i-th coordinate direction with Y solved for the current iterate.
AscentResult gradient_ascent(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                             const Vec& start, double x0, AscentOptions options = {});

}  // namespace merton
