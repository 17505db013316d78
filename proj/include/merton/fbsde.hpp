#pragma once

#include "merton/market_model.hpp"
#include "merton/utility.hpp"
#include "merton/wealth_dynamics.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace merton {

enum class BsdeMode { ode_reduction, regression_mc, picard_coupled };

std::string to_string(BsdeMode mode);

/// What (Y, σ) depend on besides time: nothing (deterministic
/// coefficients), the regime index, or current wealth (coupled case).
enum class BsdeFeature { none, regime, wealth };

/// Solution (Y, σ) of the adjoint BSDE on the grid, with Y_T = 1.
///
/// For `none` and `regime` the solution is tabulated per node and state.
/// For `wealth` it is a polynomial in X_k per node. log Y is stored so that
/// Y > 0 by construction. `log_y_tilde` is only filled for the exponential
/// utility, where log Ỹ_t = log Y_t − ∫_t^T r ds.
class BsdeSolution {
public:
    BsdeSolution(BsdeMode mode, BsdeFeature feature, int n_nodes, int n_assets, int n_states);

    BsdeMode mode() const { return mode_; }
    BsdeFeature feature() const { return feature_; }
    int n_nodes() const { return n_nodes_; }
    int n_assets() const { return n_assets_; }
    int n_states() const { return n_states_; }

    double log_y(int node, double feature = 0.0) const;
    double y(int node, double feature = 0.0) const { return std::exp(log_y(node, feature)); }
    Vec sigma(int node, double feature = 0.0) const;
    double log_y_tilde(int node, double feature = 0.0) const;
    bool has_tilde() const { return has_tilde_; }

    // Table access (feature none/regime).
    void set_table(int node, int state, double log_y, const Vec& sigma);
    void set_tilde_table(int node, int state, double log_y_tilde);

    // Polynomial access (feature wealth): coefficients in raw X.
    void set_polynomial(int node, Eigen::VectorXd log_y_tilde_coef, Eigen::MatrixXd sigma_coef,
                        double tail_rate_integral);
    const Eigen::MatrixXd& sigma_polynomial(int node) const { return sigma_poly_[node]; }

private:
    std::size_t cell(int node, int state) const;

    BsdeMode mode_;
    BsdeFeature feature_;
    int n_nodes_;
    int n_assets_;
    int n_states_;
    bool has_tilde_ = false;

    std::vector<double> log_y_;        // [node][state]
    std::vector<double> log_y_tilde_;  // [node][state]
    std::vector<double> sigma_;        // [node][state][asset]

    std::vector<Eigen::VectorXd> log_y_tilde_poly_;
    std::vector<Eigen::MatrixXd> sigma_poly_;
    std::vector<double> tail_rate_;  // ∫_t^T r ds per node
};

/// Feature value at a path state for a given solution.
double bsde_feature(const BsdeSolution& solution, int regime, double wealth);

/// Deterministic coefficients, log/power utility: σ ≡ 0 and log Y solves
/// the backward ODE at the optimal policy, d log Y/dt = −(A r + B θᵀΣ⁻¹θ)
/// (power: −(ηr + ½·η/(1−η)·θᵀΣ⁻¹θ); log: Y ≡ 1).
BsdeSolution solve_bsde_deterministic(const Utility& utility, const DiscreteMarket& market);

/// Same reduction for a deterministic (constant or time-function) policy π:
/// σ ≡ 0 and d log Y/dt = −h^π/F1, which depends only on time for log and
/// power utility.
BsdeSolution solve_bsde_for_policy(const Utility& utility, const DiscreteMarket& market,
                                   const PortfolioPolicy& policy);

struct RegressionOptions {
    int basis_degree = 3;
    long min_paths = 100;
};

/// Least-squares Monte Carlo for the decoupled (log/power) BSDE at the
/// optimal policy when coefficients follow the regime chain. Conditional
/// expectations are regressions on polynomials in the regime index;
/// σ_k regresses (Y_{k+1} − Ê_k Y_{k+1})·ΔM_k.
BsdeSolution solve_bsde_regression(const Utility& utility, const DiscreteMarket& market,
                                   const NoisePathSet& noise, RegressionOptions options = {});

struct PicardOptions {
    int max_iters = 20;
    double tol = 1e-4;
    double damping = 0.5;  // σ ← σ + damping·(σ_new − σ)
    int basis_degree = 1;
};

using OptimalControl = std::variant<PortfolioPolicy, DollarPolicy>;

struct OptimalPolicyResult {
    OptimalControl policy;
    BsdeSolution solution;
    double residual = 0.0;                 // max node ‖g + F1Σσ‖ on validation paths
    int iterations = 0;                    // Picard iterations used (0 otherwise)
    bool converged = true;
    std::vector<double> picard_history;    // sup-node ‖σ^{k+1} − σ^k‖ per iteration
};

/// Coupled exponential case: Picard iteration between the forward dollar
/// wealth with π̃ = (Σ⁻¹θ + σ)/γ and the regression solve of
/// d log Ỹ = (γ X r + ½θᵀΣ⁻¹θ + θᵀσ) dt + σᵀdM, log Ỹ_T = 0.
/// Throws NumericalError (with the history) if tol is not reached.
OptimalPolicyResult solve_fbsde_exponential(const DiscreteMarket& market, const NoisePathSet& noise,
                                            double gamma, double x0, PicardOptions options = {});

/// π* = ζ(Σ⁻¹θ + σ) for log/power; the residual is evaluated on
/// `validation` paths started at x0.
OptimalPolicyResult optimal_policy(const Utility& utility, const DiscreteMarket& market,
                                   const BsdeSolution& solution, const NoisePathSet& validation,
                                   double x0);

/// max over paths and unstopped nodes of ‖g^π + F1 Σ σ‖ for a weight policy.
double stationarity_residual(const Utility& utility, const DiscreteMarket& market,
                             const NoisePathSet& noise, const StoppedPolicy& policy,
                             const BsdeSolution& solution, double x0);

/// CSV with columns t,Y,sigma_1..sigma_n,mode. Feature-dependent solutions
/// are written at `feature` (regime index or wealth).
void write_bsde_csv(std::ostream& out, const BsdeSolution& solution, const TimeGrid& grid,
                    double feature = 0.0);

}  // namespace merton
