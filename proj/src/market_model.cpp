#include "merton/market_model.hpp"

#include <unsupported/Eigen/MatrixFunctions>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <random>

namespace merton {

namespace {

std::mt19937_64 path_stream(std::uint64_t seed, std::uint64_t path, std::uint32_t tag)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), tag};
    return std::mt19937_64(seq);
}

constexpr std::uint32_t kNoiseTag = 0x4e4f4953;   // "NOIS"
constexpr std::uint32_t kRegimeTag = 0x5245474d;  // "REGM"

}  // namespace

MarketSpec constant_market_spec(double rate, const Vec& drift, const Mat& covariance)
{
    MarketSpec spec;
    spec.n_assets = static_cast<int>(drift.size());
    Coefficients c{rate, drift, covariance};
    spec.regimes.push_back([c](double) { return c; });
    return spec;
}

void check_coefficients(const Coefficients& c, int n, double bound_M, double eps, double C, double t)
{
    if (c.drift.size() != n || c.covariance.rows() != n || c.covariance.cols() != n)
        throw std::invalid_argument(fmt::format("market: coefficient shape mismatch at t={}", t));
    if (!std::isfinite(c.rate) || !c.drift.allFinite() || !c.covariance.allFinite())
        throw std::invalid_argument(fmt::format("market: non-finite coefficient at t={}", t));
    if (std::abs(c.rate) > bound_M)
        throw std::invalid_argument(fmt::format("market: |r|={} exceeds bound M={} at t={}",
                                                std::abs(c.rate), bound_M, t));
    if (c.drift.cwiseAbs().maxCoeff() > bound_M)
        throw std::invalid_argument(fmt::format("market: max|alpha|={} exceeds bound M={} at t={}",
                                                c.drift.cwiseAbs().maxCoeff(), bound_M, t));
    const double scale = std::max(1.0, c.covariance.cwiseAbs().maxCoeff());
    if ((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw std::invalid_argument(fmt::format("market: covariance not symmetric at t={}", t));
    Eigen::SelfAdjointEigenSolver<Mat> eig(c.covariance, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (lo < eps)
        throw std::invalid_argument(fmt::format(
            "market: covariance eigenvalue {} below ellipticity bound eps={} at t={}", lo, eps, t));
    if (hi > C)
        throw std::invalid_argument(fmt::format(
            "market: covariance eigenvalue {} above variance bound C={} at t={}", hi, C, t));
}

MarketModel build_market(const MarketSpec& spec)
{
    const int n = spec.n_assets;
    if (n < 1 || n > kMaxAssets)
        throw std::invalid_argument(fmt::format("market: n_assets must be in [1, {}]", kMaxAssets));
    if (spec.regimes.empty())
        throw std::invalid_argument("market: no coefficient specification");
    if (spec.regimes.size() > 255)
        throw std::invalid_argument("market: at most 255 regimes");
    if (!(spec.horizon > 0.0) || !std::isfinite(spec.horizon))
        throw std::invalid_argument("market: horizon must be positive");
    if (!(spec.ellipticity_eps > 0.0))
        throw std::invalid_argument("market: ellipticity eps must be positive");
    if (!(spec.ellipticity_C >= spec.ellipticity_eps) || !std::isfinite(spec.ellipticity_C))
        throw std::invalid_argument("market: variance bound C must be finite and >= eps");
    if (!(spec.bound_M > 0.0) || !std::isfinite(spec.bound_M))
        throw std::invalid_argument("market: bound M must be positive and finite");
    if (spec.validation_points < 2)
        throw std::invalid_argument("market: need at least 2 validation points");

    const auto n_regimes = static_cast<int>(spec.regimes.size());
    if (n_regimes > 1) {
        const auto& Q = spec.generator;
        if (Q.rows() != n_regimes || Q.cols() != n_regimes)
            throw std::invalid_argument("market: generator must be n_regimes x n_regimes");
        for (int i = 0; i < n_regimes; ++i) {
            for (int j = 0; j < n_regimes; ++j)
                if (i != j && Q(i, j) < 0.0)
                    throw std::invalid_argument("market: generator off-diagonal entries must be >= 0");
            if (std::abs(Q.row(i).sum()) > 1e-10)
                throw std::invalid_argument("market: generator rows must sum to zero");
        }
    }
    if (spec.initial_regime < 0 || spec.initial_regime >= n_regimes)
        throw std::invalid_argument("market: initial regime out of range");

    Vec prices = spec.initial_prices.size() == 0 ? Vec(Vec::Ones(n)) : spec.initial_prices;
    if (prices.size() != n || (prices.array() <= 0.0).any() || !prices.allFinite())
        throw std::invalid_argument("market: initial prices must be positive, one per asset");

    for (const auto& fn : spec.regimes) {
        for (int j = 0; j < spec.validation_points; ++j) {
            const double t = spec.horizon * j / (spec.validation_points - 1);
            check_coefficients(fn(t), n, spec.bound_M, spec.ellipticity_eps, spec.ellipticity_C, t);
        }
    }

    MarketModel m;
    m.n_assets_ = n;
    m.regimes_ = spec.regimes;
    m.generator_ = n_regimes > 1 ? spec.generator : Eigen::MatrixXd::Zero(1, 1);
    m.initial_regime_ = spec.initial_regime;
    m.bound_M_ = spec.bound_M;
    m.eps_ = spec.ellipticity_eps;
    m.C_ = spec.ellipticity_C;
    m.initial_prices_ = prices;
    m.horizon_ = spec.horizon;
    return m;
}

Coefficients MarketModel::coefficients(double t, int regime) const
{
    return regimes_.at(static_cast<std::size_t>(regime))(t);
}

TimeGrid::TimeGrid(double horizon, int n_steps) : horizon_(horizon), n_steps_(n_steps)
{
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw std::invalid_argument("grid: horizon must be positive");
    if (n_steps < 1) throw std::invalid_argument("grid: n_steps must be positive");
    dt_ = horizon / n_steps;
}

Vec NodeCoefficients::solve(const Vec& b) const
{
    return ldlt.solve(b);
}

DiscreteMarket::DiscreteMarket(MarketModel model, TimeGrid grid)
    : model_(std::move(model)), grid_(grid)
{
    const int n = model_.n_assets();
    if (std::abs(grid_.horizon() - model_.horizon()) > 1e-12 * model_.horizon())
        throw std::invalid_argument("grid horizon differs from the market horizon");

    nodes_.reserve(static_cast<std::size_t>(model_.n_regimes()) * grid_.n_nodes());
    for (int reg = 0; reg < model_.n_regimes(); ++reg) {
        for (int k = 0; k < grid_.n_nodes(); ++k) {
            const double t = grid_.node(k);
            Coefficients c = model_.coefficients(t, reg);
            check_coefficients(c, n, model_.bound_M(), model_.ellipticity_eps(), model_.ellipticity_C(), t);
            NodeCoefficients nc;
            nc.rate = c.rate;
            nc.theta = c.excess_return();
            nc.covariance = c.covariance;
            Eigen::LLT<Mat> llt(c.covariance);
            if (llt.info() != Eigen::Success)
                throw NumericalError(fmt::format("Cholesky factorization failed at node {}", k));
            nc.cholesky = llt.matrixL();
            nc.ldlt.compute(c.covariance);
            nc.sigma_inv_theta = nc.ldlt.solve(nc.theta);
            nc.theta_sigma_inv_theta = nc.theta.dot(nc.sigma_inv_theta);
            nodes_.push_back(std::move(nc));
        }
    }

    constant_ = model_.n_regimes() == 1;
    for (int k = 1; constant_ && k < grid_.n_nodes(); ++k) {
        const auto& a = nodes_[0];
        const auto& b = nodes_[k];
        constant_ = a.rate == b.rate && a.theta == b.theta && a.covariance == b.covariance;
    }

    cumulative_rate_.reserve(nodes_.size());
    for (int reg = 0; reg < model_.n_regimes(); ++reg) {
        double acc = 0.0;
        for (int k = 0; k < grid_.n_nodes(); ++k) {
            cumulative_rate_.push_back(acc);
            acc += at(k, reg).rate * grid_.dt();
        }
    }

    if (model_.is_modulated())
        transition_ = (model_.generator() * grid_.dt()).exp();
    else
        transition_ = Eigen::MatrixXd::Ones(1, 1);
}

double DiscreteMarket::integrated_rate(double t, int regime) const
{
    const double T = grid_.horizon();
    if (t < -1e-12 * T || t > T * (1 + 1e-12))
        throw std::invalid_argument(fmt::format("integrated_rate: t={} outside [0, {}]", t, T));
    t = std::clamp(t, 0.0, T);
    int k = static_cast<int>(std::floor(t / grid_.dt()));
    k = std::clamp(k, 0, grid_.n_steps());
    const double tau = t - k * grid_.dt();
    const std::size_t base = static_cast<std::size_t>(regime) * grid_.n_nodes();
    if (k == grid_.n_steps()) return cumulative_rate_[base + k];
    return cumulative_rate_[base + k] + at(k, regime).rate * tau;
}

NoisePathSet NoisePathSet::from_increments(long n_paths, int n_steps, int n_assets,
                                           std::vector<double> increments)
{
    if (n_paths < 0 || n_steps < 1 || n_assets < 1)
        throw std::invalid_argument("noise: invalid shape");
    if (increments.size() != static_cast<std::size_t>(n_paths) * n_steps * n_assets)
        throw std::invalid_argument("noise: increment count does not match shape");
    NoisePathSet s;
    s.n_paths_ = n_paths;
    s.n_steps_ = n_steps;
    s.n_assets_ = n_assets;
    s.increments_ = std::move(increments);
    return s;
}

NoisePathSet sample_noise(const DiscreteMarket& market, std::uint64_t seed, long n_paths,
                          NoiseOptions options)
{
    if (n_paths < 0) throw std::invalid_argument("noise: n_paths must be non-negative");
    if (options.antithetic && n_paths % 2 != 0)
        throw std::invalid_argument("noise: antithetic sampling needs an even number of paths");

    const auto& grid = market.grid();
    const int n = market.n_assets();
    const int steps = grid.n_steps();
    const double sqrt_dt = std::sqrt(grid.dt());
    const bool modulated = market.model().is_modulated();

    NoisePathSet s;
    s.seed_ = seed;
    s.n_paths_ = n_paths;
    s.n_steps_ = steps;
    s.n_assets_ = n;
    s.antithetic_ = options.antithetic;
    s.increments_.assign(static_cast<std::size_t>(n_paths) * steps * n, 0.0);
    if (modulated) s.regimes_.assign(static_cast<std::size_t>(n_paths) * (steps + 1), 0);

    const long n_streams = options.antithetic ? n_paths / 2 : n_paths;
    const auto& P = market.transition();

#pragma omp parallel for schedule(static)
    for (long stream = 0; stream < n_streams; ++stream) {
        const long first = options.antithetic ? 2 * stream : stream;

        // Regime path first: it is needed to pick the covariance factor.
        std::vector<int> regimes(static_cast<std::size_t>(steps) + 1, 0);
        if (modulated) {
            auto eng = path_stream(seed, static_cast<std::uint64_t>(stream), kRegimeTag);
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            regimes[0] = market.model().initial_regime();
            for (int k = 0; k < steps; ++k) {
                const int from = regimes[static_cast<std::size_t>(k)];
                const double u = unif(eng);
                double acc = 0.0;
                int to = static_cast<int>(P.cols()) - 1;
                for (int j = 0; j < P.cols(); ++j) {
                    acc += P(from, j);
                    if (u < acc) {
                        to = j;
                        break;
                    }
                }
                regimes[static_cast<std::size_t>(k) + 1] = to;
            }
        }

        auto eng = path_stream(seed, static_cast<std::uint64_t>(stream), kNoiseTag);
        std::normal_distribution<double> normal(0.0, 1.0);
        Vec xi(n);
        for (int k = 0; k < steps; ++k) {
            for (int i = 0; i < n; ++i) xi[i] = normal(eng);
            const Vec dm = sqrt_dt * (market.at(k, regimes[static_cast<std::size_t>(k)]).cholesky * xi);
            for (int i = 0; i < n; ++i) {
                s.increments_[s.offset(first, k) + i] = dm[i];
                if (options.antithetic) s.increments_[s.offset(first + 1, k) + i] = -dm[i];
            }
        }
        if (modulated) {
            for (int k = 0; k <= steps; ++k) {
                const auto r = static_cast<std::uint8_t>(regimes[static_cast<std::size_t>(k)]);
                s.regimes_[static_cast<std::size_t>(first) * (steps + 1) + k] = r;
                if (options.antithetic) s.regimes_[static_cast<std::size_t>(first + 1) * (steps + 1) + k] = r;
            }
        }
    }
    return s;
}

PricePaths simulate_asset_prices(const DiscreteMarket& market, const NoisePathSet& noise)
{
    const auto& grid = market.grid();
    const int n = market.n_assets();
    if (noise.n_assets() != n || noise.n_steps() != grid.n_steps())
        throw std::invalid_argument("prices: noise shape does not match the market grid");

    PricePaths out;
    out.n_paths = noise.n_paths();
    out.n_nodes = grid.n_nodes();
    out.n_assets = n;
    out.risky.resize(static_cast<std::size_t>(out.n_paths) * out.n_nodes * n);
    out.riskless.resize(static_cast<std::size_t>(out.n_paths) * out.n_nodes);
    const double dt = grid.dt();
    const Vec& p0 = market.model().initial_prices();

#pragma omp parallel for schedule(static)
    for (long p = 0; p < out.n_paths; ++p) {
        Vec log_p = p0.array().log().matrix();
        double log_bank = 0.0;
        for (int k = 0;; ++k) {
            const std::size_t base = (static_cast<std::size_t>(p) * out.n_nodes + k) * n;
            for (int i = 0; i < n; ++i) out.risky[base + i] = std::exp(log_p[i]);
            out.riskless[static_cast<std::size_t>(p) * out.n_nodes + k] = std::exp(log_bank);
            if (k == grid.n_steps()) break;
            const int reg = noise.regime(p, k);
            const auto& c = market.at(k, reg);
            const auto dm = noise.increment(p, k);
            for (int i = 0; i < n; ++i) {
                const double alpha = c.theta[i] + c.rate;
                log_p[i] += (alpha - 0.5 * c.covariance(i, i)) * dt + dm[static_cast<std::size_t>(i)];
            }
            log_bank += c.rate * dt;
        }
    }
    return out;
}

}  // namespace merton
