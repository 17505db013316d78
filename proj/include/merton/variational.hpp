#pragma once

#include "merton/fbsde.hpp"
#include "merton/market_model.hpp"
#include "merton/stats.hpp"
#include "merton/utility.hpp"
#include "merton/wealth_dynamics.hpp"

#include <string>
#include <vector>

namespace merton {

/// U(X_T) per path. Log utility skips exp/log round trips.
std::vector<double> terminal_utilities(const Utility& utility, const DiscreteMarket& market,
                                       const NoisePathSet& noise, const StoppedPolicy& policy, double x0);
std::vector<double> terminal_utilities(const Utility& utility, const DiscreteMarket& market,
                                       const NoisePathSet& noise, const StoppedDollarPolicy& policy,
                                       double x0);

/// H(π) = E U(X_T^π) with its standard error. DomainError names the path.
McEstimate performance_criterion(const Utility& utility, const DiscreteMarket& market,
                                 const NoisePathSet& noise, const StoppedPolicy& policy, double x0);
McEstimate performance_criterion(const Utility& utility, const DiscreteMarket& market,
                                 const NoisePathSet& noise, const StoppedDollarPolicy& policy, double x0);

enum class GateauxMethod { finite_difference, formula };

struct GateauxRung {
    double epsilon = 0.0;
    McEstimate estimate;
    double bias = 0.0;  // Richardson c·ε², NaN on a one-rung ladder
};

struct GateauxEstimate {
    double value = 0.0;
    double std_error = 0.0;
    GateauxMethod method = GateauxMethod::formula;
    std::vector<double> epsilon_ladder;
    std::vector<GateauxRung> rungs;
    int selected = -1;
    std::string diagnostic;  // empty when nothing to report
};

inline const std::vector<double> kDefaultLadder{0.1, 0.05, 0.025, 0.0125};

/// Central differences (H(π+εω) − H(π−εω))/2ε on shared noise for every
/// rung; reports the rung minimizing bias² + SE².
GateauxEstimate gateaux_fd(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                           const StoppedPolicy& policy, const PortfolioPolicy& direction, double x0,
                           const std::vector<double>& ladder = kDefaultLadder);
GateauxEstimate gateaux_fd(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                           const StoppedDollarPolicy& policy, const DollarPolicy& direction, double x0,
                           const std::vector<double>& ladder = kDefaultLadder);

/// E ∫_0^{T∧τ} ωᵀ Y (g + F1 Σ σ) dt with left-endpoint quadrature.
GateauxEstimate gateaux_formula(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                                const StoppedPolicy& policy, const PortfolioPolicy& direction, double x0,
                                const BsdeSolution& solution);

/// Perturbation processes (F1, g, h, q, I^ω) along one path, one entry
/// per node. Values after the stop are those of the zero policy.
struct PerturbationNode {
    double t = 0.0;
    double F1 = 0.0;
    Vec g;
    double h = 0.0;
    double q = 0.0;
    double I_omega = 0.0;  // value at t_k, before the step
    bool stopped = false;
};

std::vector<PerturbationNode> perturbation_processes(const Utility& utility, const DiscreteMarket& market,
                                                     const NoisePathSet& noise, long path,
                                                     const StoppedPolicy& policy, const PortfolioPolicy& direction,
                                                     double x0);

struct ExpansionCheck {
    std::vector<double> ladder;
    std::vector<double> remainder;  // R(ε) = H(π+εω) − H(π) − ε D
    double first_order = 0.0;       // D = E[F1_T I^ω_T], same paths
    double integrated_first_order = 0.0;  // E ∫ (ωᵀg + I^ω h) dt, diagnostic
    double slope = 0.0;             // NaN when R ≡ 0
};

/// Log-log least-squares slope of |R(ε)| against ε. Throws NumericalError
/// when fewer than two rungs rise above the roundoff floor.
ExpansionCheck expansion_order_check(const Utility& utility, const DiscreteMarket& market,
                                     const NoisePathSet& noise, const StoppedPolicy& policy,
                                     const PortfolioPolicy& direction, double x0,
                                     const std::vector<double>& ladder = {0.1, 0.05, 0.025});

struct MhatNode {
    int node = 0;
    McEstimate deviation;  // E[D_t − D_T]
    double se_units = 0.0;
};

struct MhatCheck {
    std::vector<MhatNode> nodes;
    double max_se_units = 0.0;
};

/// D_t = F1_t (Y_t − 1) + ∫_0^t h du must have constant mean. Compares each
/// checked node with the terminal value pathwise (paired differences).
MhatCheck mhat_martingale_check(const Utility& utility, const DiscreteMarket& market, const NoisePathSet& noise,
                                const StoppedPolicy& policy, const BsdeSolution& solution, double x0,
                                int n_check_nodes = 10);

std::string to_string(GateauxMethod method);

}  // namespace merton
