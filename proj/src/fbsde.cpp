#include "merton/fbsde.hpp"

#include "merton/parallel.hpp"
#include "merton/regression.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace merton {

std::string to_string(BsdeMode mode)
{
    switch (mode) {
    case BsdeMode::ode_reduction: return "ode-reduction";
    case BsdeMode::regression_mc: return "regression-mc";
    case BsdeMode::picard_coupled: return "picard-coupled";
    }
    return "unknown";
}

BsdeSolution::BsdeSolution(BsdeMode mode, BsdeFeature feature, int n_nodes, int n_assets, int n_states)
    : mode_(mode), feature_(feature), n_nodes_(n_nodes), n_assets_(n_assets), n_states_(n_states)
{
    if (feature == BsdeFeature::wealth) {
        log_y_tilde_poly_.assign(static_cast<std::size_t>(n_nodes), Eigen::VectorXd::Zero(1));
        sigma_poly_.assign(static_cast<std::size_t>(n_nodes), Eigen::MatrixXd::Zero(1, n_assets));
        tail_rate_.assign(static_cast<std::size_t>(n_nodes), 0.0);
        has_tilde_ = true;
    } else {
        const auto cells = static_cast<std::size_t>(n_nodes) * n_states;
        log_y_.assign(cells, 0.0);
        sigma_.assign(cells * n_assets, 0.0);
    }
}

std::size_t BsdeSolution::cell(int node, int state) const
{
    if (node < 0 || node >= n_nodes_) throw std::out_of_range("bsde: node index out of range");
    if (state < 0 || state >= n_states_) throw std::out_of_range("bsde: state index out of range");
    return static_cast<std::size_t>(node) * n_states_ + state;
}

namespace {

double eval_poly(const Eigen::VectorXd& c, double x)
{
    double acc = 0.0;
    for (auto j = c.size() - 1; j >= 0; --j) acc = acc * x + c[j];
    return acc;
}

Vec eval_poly_rows(const Eigen::MatrixXd& c, double x)
{
    Vec out = Vec::Zero(c.cols());
    for (auto j = c.rows() - 1; j >= 0; --j) out = out * x + c.row(j).transpose();
    return out;
}

}  // namespace

double BsdeSolution::log_y(int node, double feature) const
{
    if (feature_ == BsdeFeature::wealth)
        return log_y_tilde(node, feature) + tail_rate_[static_cast<std::size_t>(node)];
    const int state = feature_ == BsdeFeature::regime ? static_cast<int>(feature) : 0;
    return log_y_[cell(node, state)];
}

double BsdeSolution::log_y_tilde(int node, double feature) const
{
    if (!has_tilde_) throw std::logic_error("bsde: no transformed solution stored");
    if (feature_ == BsdeFeature::wealth) return eval_poly(log_y_tilde_poly_[static_cast<std::size_t>(node)], feature);
    const int state = feature_ == BsdeFeature::regime ? static_cast<int>(feature) : 0;
    return log_y_tilde_[cell(node, state)];
}

Vec BsdeSolution::sigma(int node, double feature) const
{
    if (feature_ == BsdeFeature::wealth) return eval_poly_rows(sigma_poly_[static_cast<std::size_t>(node)], feature);
    const int state = feature_ == BsdeFeature::regime ? static_cast<int>(feature) : 0;
    const std::size_t base = cell(node, state) * n_assets_;
    Vec out(n_assets_);
    for (int i = 0; i < n_assets_; ++i) out[i] = sigma_[base + i];
    return out;
}

void BsdeSolution::set_table(int node, int state, double log_y, const Vec& sigma)
{
    const std::size_t c = cell(node, state);
    log_y_[c] = log_y;
    for (int i = 0; i < n_assets_; ++i) sigma_[c * n_assets_ + i] = sigma[i];
}

void BsdeSolution::set_tilde_table(int node, int state, double log_y_tilde)
{
    if (log_y_tilde_.empty()) log_y_tilde_.assign(log_y_.size(), 0.0);
    has_tilde_ = true;
    log_y_tilde_[cell(node, state)] = log_y_tilde;
}

void BsdeSolution::set_polynomial(int node, Eigen::VectorXd log_y_tilde_coef, Eigen::MatrixXd sigma_coef,
                                  double tail_rate_integral)
{
    if (feature_ != BsdeFeature::wealth) throw std::logic_error("bsde: polynomial storage needs wealth feature");
    log_y_tilde_poly_.at(static_cast<std::size_t>(node)) = std::move(log_y_tilde_coef);
    sigma_poly_.at(static_cast<std::size_t>(node)) = std::move(sigma_coef);
    tail_rate_.at(static_cast<std::size_t>(node)) = tail_rate_integral;
}

double bsde_feature(const BsdeSolution& solution, int regime, double wealth)
{
    switch (solution.feature()) {
    case BsdeFeature::none: return 0.0;
    case BsdeFeature::regime: return regime;
    case BsdeFeature::wealth: return wealth;
    }
    return 0.0;
}

namespace {

void require_decoupled(const Utility& utility, const char* who)
{
    if (!utility.is_scale_invariant())
        throw std::invalid_argument(fmt::format("{}: utility must be log or power (got {})", who, utility.name()));
}

/// Geometric drift of Y at the optimal policy: dY/Y = (A r + B vᵀΣv) dt + σᵀdM
/// with v = Σ⁻¹θ + σ.
double optimal_drift(const CoefficientBundle& b, const NodeCoefficients& c, const Vec& sigma)
{
    const Vec v = c.sigma_inv_theta + sigma;
    return b.A * c.rate + b.B * v.dot(c.covariance * v);
}

}  // namespace

BsdeSolution solve_bsde_deterministic(const Utility& utility, const DiscreteMarket& market)
{
    require_decoupled(utility, "solve_bsde_deterministic");
    if (market.model().is_modulated())
        throw std::invalid_argument("solve_bsde_deterministic: coefficients must be deterministic in time");

    const auto& grid = market.grid();
    const int N = grid.n_steps();
    const int n = market.n_assets();
    const CoefficientBundle b = coefficient_bundle(utility, 1.0);
    BsdeSolution sol(BsdeMode::ode_reduction, BsdeFeature::none, grid.n_nodes(), n, 1);

    const Vec zero = Vec::Zero(n);
    double log_y = 0.0;
    sol.set_table(N, 0, 0.0, zero);
    for (int k = N - 1; k >= 0; --k) {
        log_y -= optimal_drift(b, market.at(k), zero) * grid.dt();
        sol.set_table(k, 0, log_y, zero);
    }
    return sol;
}

BsdeSolution solve_bsde_for_policy(const Utility& utility, const DiscreteMarket& market,
                                   const PortfolioPolicy& policy)
{
    require_decoupled(utility, "solve_bsde_for_policy");
    if (market.model().is_modulated())
        throw std::invalid_argument("solve_bsde_for_policy: coefficients must be deterministic in time");
    if (!policy.is_deterministic())
        throw std::invalid_argument("solve_bsde_for_policy: policy must not depend on wealth");
    if (policy.n_assets() != market.n_assets())
        throw std::invalid_argument("solve_bsde_for_policy: policy asset count mismatch");

    const auto& grid = market.grid();
    const int N = grid.n_steps();
    const int n = market.n_assets();
    const CoefficientBundle b = coefficient_bundle(utility, 1.0);
    const double f2 = b.F2 / b.F1;
    const double f3 = b.F3 / b.F1;
    BsdeSolution sol(BsdeMode::ode_reduction, BsdeFeature::none, grid.n_nodes(), n, 1);

    const Vec zero = Vec::Zero(n);
    double log_y = 0.0;
    sol.set_table(N, 0, 0.0, zero);
    for (int k = N - 1; k >= 0; --k) {
        const auto& c = market.at(k);
        const Vec pi = policy(grid.node(k), std::nan(""), 0);
        // h/F1 with F_k/F1 independent of wealth.
        const double h_over_f1 =
            (1.0 + f2) * (c.rate + pi.dot(c.theta)) + (f2 + 0.5 * f3) * pi.dot(c.covariance * pi);
        log_y += h_over_f1 * grid.dt();
        sol.set_table(k, 0, log_y, zero);
    }
    return sol;
}

BsdeSolution solve_bsde_regression(const Utility& utility, const DiscreteMarket& market,
                                   const NoisePathSet& noise, RegressionOptions options)
{
    require_decoupled(utility, "solve_bsde_regression");
    if (noise.n_paths() < options.min_paths)
        throw std::invalid_argument(fmt::format("solve_bsde_regression: need at least {} paths, got {}",
                                                options.min_paths, noise.n_paths()));
    if (noise.n_steps() != market.grid().n_steps() || noise.n_assets() != market.n_assets())
        throw std::invalid_argument("solve_bsde_regression: noise shape does not match the market grid");
    if (market.model().is_modulated() && !noise.has_regimes())
        throw std::invalid_argument("solve_bsde_regression: noise carries no regime paths");

    const auto& grid = market.grid();
    const int N = grid.n_steps();
    const int n = market.n_assets();
    const int n_states = market.n_regimes();
    const long P = noise.n_paths();
    const double dt = grid.dt();
    const CoefficientBundle b = coefficient_bundle(utility, 1.0);

    BsdeSolution sol(BsdeMode::regression_mc, BsdeFeature::regime, grid.n_nodes(), n, n_states);
    std::vector<double> y_next(static_cast<std::size_t>(P), 1.0);
    std::vector<double> feature(static_cast<std::size_t>(P));
    Eigen::MatrixXd target(P, 1);
    Eigen::MatrixXd cross(P, n);
    std::vector<double> y_state(static_cast<std::size_t>(n_states));
    std::vector<char> visited(static_cast<std::size_t>(n_states));

    for (int s = 0; s < n_states; ++s) sol.set_table(N, s, 0.0, Vec::Zero(n));

    for (int k = N - 1; k >= 0; --k) {
        std::fill(visited.begin(), visited.end(), 0);
        for (long p = 0; p < P; ++p) {
            const int reg = noise.regime(p, k);
            feature[static_cast<std::size_t>(p)] = reg;
            visited[static_cast<std::size_t>(reg)] = 1;
            target(p, 0) = y_next[static_cast<std::size_t>(p)];
        }
        const PolynomialFit mean_fit = fit_polynomial(feature, target, options.basis_degree, k);
        for (long p = 0; p < P; ++p) {
            const double resid = target(p, 0) - mean_fit.evaluate(feature[static_cast<std::size_t>(p)]);
            const auto dm = noise.increment(p, k);
            for (int i = 0; i < n; ++i) cross(p, i) = resid * dm[static_cast<std::size_t>(i)];
        }
        const PolynomialFit cross_fit = fit_polynomial(feature, cross, options.basis_degree, k);

        for (int s = 0; s < n_states; ++s) {
            const auto& c = market.at(k, s);
            const double y_hat = mean_fit.evaluate(s);
            if (!visited[static_cast<std::size_t>(s)]) {
                y_state[static_cast<std::size_t>(s)] = std::nan("");
                sol.set_table(k, s, std::nan(""), Vec::Constant(n, std::nan("")));
                continue;
            }
            if (!(y_hat > 0.0))
                throw NumericalError(fmt::format(
                    "solve_bsde_regression: non-positive conditional expectation {} at node {}, regime {}",
                    y_hat, k, s));
            Vec z(n);
            for (int i = 0; i < n; ++i) z[i] = cross_fit.evaluate(s, i);
            const Vec sigma = c.solve(z) / (dt * y_hat);
            const double y = y_hat * std::exp(-optimal_drift(b, c, sigma) * dt);
            y_state[static_cast<std::size_t>(s)] = y;
            sol.set_table(k, s, std::log(y), sigma);
        }
        for (long p = 0; p < P; ++p)
            y_next[static_cast<std::size_t>(p)] = y_state[static_cast<std::size_t>(noise.regime(p, k))];
    }
    return sol;
}

double stationarity_residual(const Utility& utility, const DiscreteMarket& market,
                             const NoisePathSet& noise, const StoppedPolicy& policy,
                             const BsdeSolution& solution, double x0)
{
    std::vector<double> per_path(static_cast<std::size_t>(noise.n_paths()), 0.0);
    detail::for_each_path(noise.n_paths(), [&](long p) {
        double worst = 0.0;
        detail::walk_weight_path(market, noise, p, policy, x0, true, [&](const detail::StepState& s) {
            if (s.stopped) return;
            const CoefficientBundle b = coefficient_bundle(utility, s.wealth);
            const Vec sigma = solution.sigma(s.k, bsde_feature(solution, s.regime, s.wealth));
            const Vec& pi = *s.control;
            const Vec g = b.F1 * s.coef->theta + b.F2 * (s.coef->covariance * pi);
            const Vec r = g + b.F1 * (s.coef->covariance * sigma);
            worst = std::max(worst, r.norm());
        });
        per_path[static_cast<std::size_t>(p)] = worst;
    });
    double worst = 0.0;
    for (double v : per_path) worst = std::max(worst, v);
    return worst;
}

OptimalPolicyResult optimal_policy(const Utility& utility, const DiscreteMarket& market,
                                   const BsdeSolution& solution, const NoisePathSet& validation,
                                   double x0)
{
    require_decoupled(utility, "optimal_policy");
    if (solution.mode() == BsdeMode::picard_coupled)
        throw std::invalid_argument("optimal_policy: coupled solutions carry their own policy");
    if (solution.n_nodes() != market.grid().n_nodes() || solution.n_assets() != market.n_assets())
        throw std::invalid_argument("optimal_policy: solution does not match the market grid");

    const double zeta = coefficient_bundle(utility, 1.0).zeta;
    const int n = market.n_assets();
    const auto& grid = market.grid();

    auto node_of = [&grid](double t) {
        return std::clamp(static_cast<int>(std::lround(t / grid.dt())), 0, grid.n_steps());
    };

    bool sigma_zero = solution.feature() == BsdeFeature::none;
    for (int k = 0; sigma_zero && k < solution.n_nodes(); ++k) sigma_zero = solution.sigma(k).isZero(0.0);

    std::optional<PortfolioPolicy> policy;
    if (market.is_constant() && sigma_zero) {
        policy = PortfolioPolicy::constant(zeta * market.at(0).sigma_inv_theta);
    } else if (solution.feature() == BsdeFeature::none) {
        policy = PortfolioPolicy::time_function(n, [&market, solution, zeta, node_of](double t) {
            const int k = node_of(t);
            return Vec(zeta * (market.at(k).sigma_inv_theta + solution.sigma(k)));
        });
    } else {
        policy = PortfolioPolicy::feedback(n, [&market, solution, zeta, node_of](double t, double, int reg) {
            const int k = node_of(t);
            return Vec(zeta * (market.at(k, reg).sigma_inv_theta + solution.sigma(k, reg)));
        });
    }

    const double residual = stationarity_residual(utility, market, validation, StoppedPolicy(*policy), solution, x0);
    return OptimalPolicyResult{*policy, solution, residual, 0, true, {}};
}

namespace {

Eigen::MatrixXd pad_rows(const Eigen::MatrixXd& m, Eigen::Index rows)
{
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(std::max(rows, m.rows()), m.cols());
    out.topRows(m.rows()) = m;
    return out;
}

}  // namespace

OptimalPolicyResult solve_fbsde_exponential(const DiscreteMarket& market, const NoisePathSet& noise,
                                            double gamma, double x0, PicardOptions options)
{
    if (!(gamma > 0.0)) throw std::invalid_argument("solve_fbsde_exponential: gamma must be positive");
    if (!std::isfinite(x0)) throw std::invalid_argument("solve_fbsde_exponential: x0 must be finite");
    if (market.model().is_modulated())
        throw std::invalid_argument("solve_fbsde_exponential: regime-modulated markets are not supported");
    if (options.basis_degree < 1)
        throw std::invalid_argument("solve_fbsde_exponential: basis degree must be at least 1");
    if (options.max_iters < 1 || !(options.tol > 0.0) || !(options.damping > 0.0 && options.damping <= 1.0))
        throw std::invalid_argument("solve_fbsde_exponential: invalid Picard options");
    if (noise.n_steps() != market.grid().n_steps() || noise.n_assets() != market.n_assets())
        throw std::invalid_argument("solve_fbsde_exponential: noise shape does not match the market grid");
    if (noise.n_paths() < 2) throw std::invalid_argument("solve_fbsde_exponential: need at least 2 paths");

    const auto& grid = market.grid();
    const int N = grid.n_steps();
    const int n = market.n_assets();
    const long P = noise.n_paths();
    const double dt = grid.dt();
    const int deg = options.basis_degree;

    // σ^k as raw polynomials in X per node.
    std::vector<Eigen::MatrixXd> sigma(static_cast<std::size_t>(N), Eigen::MatrixXd::Zero(deg + 1, n));
    std::vector<Eigen::MatrixXd> sigma_new(sigma);
    std::vector<Eigen::VectorXd> log_tilde(static_cast<std::size_t>(N + 1), Eigen::VectorXd::Zero(deg + 1));

    std::vector<double> X(static_cast<std::size_t>(P) * (N + 1));
    auto x_at = [&](long p, int k) -> double& { return X[static_cast<std::size_t>(p) * (N + 1) + k]; };

    std::vector<double> history;
    bool converged = false;
    int iter = 0;
    std::vector<double> feature(static_cast<std::size_t>(P));
    std::vector<double> L_next(static_cast<std::size_t>(P), 0.0);
    Eigen::MatrixXd target(P, 1);
    Eigen::MatrixXd cross(P, n);

    while (iter < options.max_iters && !converged) {
        ++iter;
        // Forward: dollar wealth under π̃ = (Σ⁻¹θ + σ^k(X))/γ.
#pragma omp parallel for schedule(static)
        for (long p = 0; p < P; ++p) {
            double x = x0;
            x_at(p, 0) = x;
            for (int k = 0; k < N; ++k) {
                const auto& c = market.at(k);
                const Vec u = (c.sigma_inv_theta + eval_poly_rows(sigma[static_cast<std::size_t>(k)], x)) / gamma;
                x += (c.rate * x + u.dot(c.theta)) * dt + u.dot(noise.increment_vec(p, k));
                x_at(p, k + 1) = x;
            }
        }

        // Backward: log Ỹ_k = Ê_k[log Ỹ_{k+1}] − f_k dt, σ_k = Σ⁻¹ Ê_k[resid·ΔM]/dt.
        std::fill(L_next.begin(), L_next.end(), 0.0);
        log_tilde[static_cast<std::size_t>(N)] = Eigen::VectorXd::Zero(deg + 1);
        for (int k = N - 1; k >= 0; --k) {
            const auto& c = market.at(k);
            for (long p = 0; p < P; ++p) {
                feature[static_cast<std::size_t>(p)] = x_at(p, k);
                target(p, 0) = L_next[static_cast<std::size_t>(p)];
            }
            const PolynomialFit mean_fit = fit_polynomial(feature, target, deg, k);
            for (long p = 0; p < P; ++p) {
                const double resid = target(p, 0) - mean_fit.evaluate(feature[static_cast<std::size_t>(p)]);
                const auto dm = noise.increment(p, k);
                for (int i = 0; i < n; ++i) cross(p, i) = resid * dm[static_cast<std::size_t>(i)];
            }
            const PolynomialFit cross_fit = fit_polynomial(feature, cross, deg, k);

            // σ_new(X) = Σ⁻¹ z(X) / dt, coefficient-wise.
            Eigen::MatrixXd s_new = Eigen::MatrixXd::Zero(deg + 1, n);
            for (int j = 0; j <= cross_fit.degree; ++j) {
                const Vec zj = cross_fit.coef.row(j).transpose();
                s_new.row(j) = (c.solve(zj) / dt).transpose();
            }
            // f(X) = γ r X + ½θᵀΣ⁻¹θ + θᵀσ_new(X)
            Eigen::VectorXd f = s_new * c.theta.cast<double>();
            f[0] += 0.5 * c.theta_sigma_inv_theta;
            f[1] += gamma * c.rate;
            Eigen::VectorXd L = pad_rows(mean_fit.coef, deg + 1).col(0) - dt * f;
            log_tilde[static_cast<std::size_t>(k)] = L;
            sigma_new[static_cast<std::size_t>(k)] = s_new;
            for (long p = 0; p < P; ++p) L_next[static_cast<std::size_t>(p)] = eval_poly(L, x_at(p, k));
        }

        // Damped update and sup-node change on the current forward paths.
        double change = 0.0;
        for (int k = 0; k < N; ++k) {
            const auto ks = static_cast<std::size_t>(k);
            const Eigen::MatrixXd delta = options.damping * (sigma_new[ks] - sigma[ks]);
            double node_max = 0.0;
            for (long p = 0; p < P; ++p)
                node_max = std::max(node_max, eval_poly_rows(delta, x_at(p, k)).cwiseAbs().maxCoeff());
            change = std::max(change, node_max);
            sigma[ks] += delta;
        }
        history.push_back(change);
        converged = change < options.tol;
    }

    if (!converged) {
        std::string hist;
        for (double h : history) hist += fmt::format(" {:.3e}", h);
        throw NumericalError(fmt::format(
            "solve_fbsde_exponential: no convergence to tol {} in {} Picard iterations; history:{}",
            options.tol, options.max_iters, hist));
    }

    BsdeSolution sol(BsdeMode::picard_coupled, BsdeFeature::wealth, grid.n_nodes(), n, 1);
    for (int k = 0; k <= N; ++k) {
        const double tail = market.integrated_rate(grid.horizon()) - market.integrated_rate(grid.node(k));
        Eigen::MatrixXd s = k < N ? sigma[static_cast<std::size_t>(k)] : Eigen::MatrixXd::Zero(deg + 1, n);
        sol.set_polynomial(k, log_tilde[static_cast<std::size_t>(k)], std::move(s), tail);
    }

    auto node_of = [&grid](double t) {
        return std::clamp(static_cast<int>(std::lround(t / grid.dt())), 0, grid.n_steps() - 1);
    };
    DollarPolicy policy = DollarPolicy::feedback(n, [&market, sol, gamma, node_of](double t, double x, int) {
        const int k = node_of(t);
        return Vec((market.at(k).sigma_inv_theta + sol.sigma(k, x)) / gamma);
    });

    // ‖g + F1Σσ‖ with π = π̃/X: F1(θ − γΣπ̃ + Σσ) on the final forward paths.
    const Utility u = Utility::exponential(gamma);
    double residual = 0.0;
    for (long p = 0; p < P; ++p) {
        for (int k = 0; k < N; ++k) {
            const double x = x_at(p, k);
            if (x == 0.0) continue;
            const auto& c = market.at(k);
            const Vec s = sol.sigma(k, x);
            const Vec pi_dollar = (c.sigma_inv_theta + s) / gamma;
            const CoefficientBundle b = coefficient_bundle(u, x);
            const Vec g = b.F1 * c.theta + b.F2 * (c.covariance * pi_dollar) / x;
            residual = std::max(residual, (g + b.F1 * (c.covariance * s)).norm());
        }
    }

    return OptimalPolicyResult{policy, sol, residual, iter, true, history};
}

void write_bsde_csv(std::ostream& out, const BsdeSolution& solution, const TimeGrid& grid, double feature)
{
    out << "t,Y";
    for (int i = 0; i < solution.n_assets(); ++i) out << ",sigma_" << (i + 1);
    out << ",mode\n";
    const std::string mode = to_string(solution.mode());
    for (int k = 0; k < solution.n_nodes(); ++k) {
        out << fmt::format("{:.17g},{:.17g}", grid.node(k), solution.y(k, feature));
        const Vec s = solution.sigma(k, feature);
        for (int i = 0; i < solution.n_assets(); ++i) out << fmt::format(",{:.17g}", s[i]);
        out << ',' << mode << '\n';
    }
}

}  // namespace merton
