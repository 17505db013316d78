#include "merton/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace merton {

namespace pt = boost::property_tree;

namespace {

std::string join_errors(const std::vector<std::string>& errors)
{
    std::string out;
    for (const auto& e : errors) {
        if (!out.empty()) out += "; ";
        out += e;
    }
    return out;
}

std::string trim(std::string s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::optional<double> to_double(const std::string& s)
{
    double v = 0.0;
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

template <class Int>
std::optional<Int> to_int(const std::string& s)
{
    Int v = 0;
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end) return std::nullopt;
    return v;
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',' || ch == ' ' || ch == '\t') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

/// Reads typed keys from one section and remembers which were used.
class Section {
public:
    Section(const pt::ptree* tree, std::string name, std::vector<std::string>& errors)
        : tree_(tree), name_(std::move(name)), errors_(errors)
    {
    }

    bool present() const { return tree_ != nullptr; }
    bool has(const std::string& key) const { return raw(key).has_value(); }

    std::optional<double> real(const std::string& key, bool required = false)
    {
        const auto s = fetch(key, required);
        if (!s) return std::nullopt;
        auto v = to_double(*s);
        if (!v) error(key, fmt::format("expected a finite real, got '{}'", *s));
        return v;
    }

    template <class Int>
    std::optional<Int> integer(const std::string& key, bool required = false)
    {
        const auto s = fetch(key, required);
        if (!s) return std::nullopt;
        auto v = to_int<Int>(*s);
        if (!v) error(key, fmt::format("expected an integer, got '{}'", *s));
        return v;
    }

    std::optional<bool> boolean(const std::string& key)
    {
        const auto s = fetch(key, false);
        if (!s) return std::nullopt;
        std::string l = *s;
        std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
        if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
        if (l == "false" || l == "0" || l == "no" || l == "off") return false;
        error(key, fmt::format("expected true/false, got '{}'", *s));
        return std::nullopt;
    }

    std::optional<std::string> text(const std::string& key, bool required = false) { return fetch(key, required); }

    std::optional<std::vector<double>> list(const std::string& key, bool required = false)
    {
        const auto s = fetch(key, required);
        if (!s) return std::nullopt;
        std::vector<double> out;
        bool ok = true;
        for (const auto& item : split_list(*s)) {
            const auto v = to_double(item);
            if (!v) {
                error(key, fmt::format("'{}' is not a finite real", item));
                ok = false;
            } else {
                out.push_back(*v);
            }
        }
        if (ok && out.empty()) {
            error(key, "empty list");
            ok = false;
        }
        return ok ? std::optional(out) : std::nullopt;
    }

    std::optional<Vec> vector(const std::string& key, int size, bool required = false)
    {
        auto l = list(key, required);
        if (!l) return std::nullopt;
        if (static_cast<int>(l->size()) != size) {
            error(key, fmt::format("expected {} values, got {}", size, l->size()));
            return std::nullopt;
        }
        Vec v(size);
        for (int i = 0; i < size; ++i) v[i] = (*l)[static_cast<std::size_t>(i)];
        return v;
    }

    void error(const std::string& key, const std::string& msg) { errors_.push_back(fmt::format("[{}] {}: {}", name_, key, msg)); }

    /// Reports keys nobody asked for.
    void finish()
    {
        if (!tree_) return;
        for (const auto& [k, v] : *tree_)
            if (!used_.count(k)) errors_.push_back(fmt::format("[{}] unknown key '{}'", name_, k));
    }

    const std::string& name() const { return name_; }

private:
    std::optional<std::string> raw(const std::string& key) const
    {
        if (!tree_) return std::nullopt;
        const auto it = tree_->find(key);
        if (it == tree_->not_found()) return std::nullopt;
        return trim(it->second.data());
    }

    std::optional<std::string> fetch(const std::string& key, bool required)
    {
        used_.insert(key);
        auto s = raw(key);
        if (!s) {
            if (required) errors_.push_back(fmt::format("[{}] missing required key '{}'", name_, key));
            return std::nullopt;
        }
        return s;
    }

    const pt::ptree* tree_;
    std::string name_;
    std::vector<std::string>& errors_;
    std::set<std::string> used_;
};

template <class T>
void assign(T& dst, const std::optional<T>& v)
{
    if (v) dst = *v;
}

void require(bool ok, Section& s, const std::string& key, const std::string& msg)
{
    if (!ok) s.error(key, msg);
}

void parse_market(Section& s, Section& reg, ExperimentConfig& cfg)
{
    auto& m = cfg.market;
    const auto n_assets = s.integer<int>("n_assets", true);
    const bool n_ok = n_assets && *n_assets >= 1 && *n_assets <= kMaxAssets;
    if (n_assets && !n_ok) s.error("n_assets", fmt::format("must be in [1, {}]", kMaxAssets));
    if (n_ok) m.n_assets = *n_assets;

    const bool modulated = reg.present();
    if (!modulated) {
        assign(m.r, s.real("r", true));
        if (n_ok) {
            if (auto a = s.vector("alpha", m.n_assets, true)) m.alpha = *a;
            if (auto l = s.list("sigma", true)) {
                if (static_cast<int>(l->size()) != m.n_assets * m.n_assets) {
                    s.error("sigma", fmt::format("expected {} values (row-major), got {}", m.n_assets * m.n_assets,
                                                 l->size()));
                } else {
                    m.sigma = Mat(m.n_assets, m.n_assets);
                    for (int i = 0; i < m.n_assets; ++i)
                        for (int j = 0; j < m.n_assets; ++j)
                            m.sigma(i, j) = (*l)[static_cast<std::size_t>(i * m.n_assets + j)];
                }
            }
        }
    } else {
        for (const char* k : {"r", "alpha", "sigma"})
            if (s.has(k)) {
                s.text(k);
                s.error(k, "coefficients come from [regime] when that section is present");
            }
    }

    assign(m.x0, s.real("x0", true));
    assign(m.T, s.real("T", true));
    require(m.T > 0.0, s, "T", "must be positive");
    const auto steps = s.integer<int>("n_steps");
    if (steps) {
        require(*steps > 0, s, "n_steps", "must be positive");
        m.n_steps = *steps;
    }
    assign(m.bound_M, s.real("bound_M", true));
    assign(m.eps, s.real("eps", true));
    assign(m.C, s.real("C", true));
    require(m.bound_M > 0.0, s, "bound_M", "must be positive");
    require(m.eps > 0.0, s, "eps", "must be positive");
    require(m.C > m.eps, s, "C", "must exceed eps");

    if (!modulated) return;
    RegimeConfig rc;
    const auto states = reg.integer<int>("states", true);
    if (states && (*states < 2 || *states > 255)) reg.error("states", "must be in [2, 255]");
    const bool ok = states && *states >= 2 && *states <= 255 && n_ok;
    const auto gen = reg.list("generator", true);
    const auto rates = reg.list("r", true);
    const auto alphas = reg.list("alpha", true);
    const auto sigmas = reg.list("sigma", true);
    if (!ok) return;
    const int S = *states;
    const int n = m.n_assets;
    rc.states = S;
    if (gen) {
        if (static_cast<int>(gen->size()) != S * S)
            reg.error("generator", fmt::format("expected {} values (row-major), got {}", S * S, gen->size()));
        else
            rc.generator = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(gen->data(), S, S);
    }
    if (rates) {
        if (static_cast<int>(rates->size()) != S)
            reg.error("r", fmt::format("expected {} values, got {}", S, rates->size()));
        else
            rc.rate = *rates;
    }
    if (alphas) {
        if (static_cast<int>(alphas->size()) != S * n) {
            reg.error("alpha", fmt::format("expected {} values, got {}", S * n, alphas->size()));
        } else {
            for (int k = 0; k < S; ++k) {
                Vec a(n);
                for (int i = 0; i < n; ++i) a[i] = (*alphas)[static_cast<std::size_t>(k * n + i)];
                rc.alpha.push_back(a);
            }
        }
    }
    if (sigmas) {
        if (static_cast<int>(sigmas->size()) != S * n * n) {
            reg.error("sigma", fmt::format("expected {} values, got {}", S * n * n, sigmas->size()));
        } else {
            for (int k = 0; k < S; ++k) {
                Mat c(n, n);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) c(i, j) = (*sigmas)[static_cast<std::size_t>((k * n + i) * n + j)];
                rc.sigma.push_back(c);
            }
        }
    }
    m.regime = std::move(rc);
    // State 0 doubles as the nominal market.
    if (!m.regime->rate.empty()) m.r = m.regime->rate[0];
    if (!m.regime->alpha.empty()) m.alpha = m.regime->alpha[0];
    if (!m.regime->sigma.empty()) m.sigma = m.regime->sigma[0];
}

void parse_utility(Section& s, ExperimentConfig& cfg)
{
    auto& u = cfg.utility;
    const auto kind = s.text("kind", true);
    if (!kind) return;
    u.kind = *kind;
    if (u.kind == "log") {
        // no parameters
    } else if (u.kind == "power") {
        const auto eta = s.real("eta", true);
        if (eta) {
            u.eta = *eta;
            if (!(u.eta < 1.0))
                s.error("eta", "power utility requires eta < 1");
            else if (u.eta == 0.0)
                s.error("eta", "power utility requires eta != 0 (use kind = log)");
        }
    } else if (u.kind == "exponential") {
        const auto gamma = s.real("gamma", true);
        if (gamma) {
            u.gamma = *gamma;
            if (!(u.gamma > 0.0)) s.error("gamma", "exponential utility requires gamma > 0");
        }
    } else {
        s.error("kind", fmt::format("unknown utility '{}' (log, power, exponential)", u.kind));
    }
}

void parse_simulation(Section& s, ExperimentConfig& cfg)
{
    auto& sim = cfg.simulation;
    assign(sim.n_paths, s.integer<long>("n_paths"));
    assign(sim.seed, s.integer<std::uint64_t>("seed"));
    assign(sim.dt, s.real("dt"));
    assign(sim.workers, s.integer<int>("workers"));
    assign(sim.antithetic, s.boolean("antithetic"));
    require(sim.n_paths > 0, s, "n_paths", "must be positive");
    require(sim.dt > 0.0, s, "dt", "must be positive");
    require(sim.workers >= 0, s, "workers", "must be non-negative");
    require(!sim.antithetic || sim.n_paths % 2 == 0, s, "n_paths", "must be even with antithetic sampling");
}

void parse_units(Section& s, std::string& units)
{
    if (auto u = s.text("units")) {
        units = *u;
        require(units == "weights" || units == "dollars", s, "units", "must be weights or dollars");
    }
}

void parse_K(Section& s, double& K)
{
    assign(K, s.real("K"));
    require(K > 0.0, s, "K", "must be positive");
}

void parse_ladder(Section& s, const std::string& key, std::vector<double>& ladder)
{
    if (auto l = s.list(key)) {
        bool ok = true;
        for (std::size_t i = 0; i < l->size(); ++i)
            if (!((*l)[i] > 0.0) || (i > 0 && !((*l)[i] < (*l)[i - 1]))) ok = false;
        if (!ok)
            s.error(key, "must be positive and strictly decreasing");
        else
            ladder = *l;
    }
}

void parse_tasks(Section& sim, Section& sol, Section& ver, Section& sea, ExperimentConfig& cfg)
{
    const int n = cfg.market.n_assets;
    const bool n_ok = n >= 1 && n <= kMaxAssets;

    if (n_ok) cfg.simulate.policy = sim.vector("policy", n);
    parse_units(sim, cfg.simulate.units);
    parse_K(sim, cfg.simulate.K);
    assign(cfg.simulate.prices, sim.boolean("prices"));

    auto& so = cfg.solve;
    if (auto m = sol.text("mode")) {
        so.mode = *m;
        require(so.mode == "auto" || so.mode == "ode" || so.mode == "regression" || so.mode == "picard", sol, "mode",
                "must be auto, ode, regression or picard");
    }
    if (auto d = sol.integer<int>("basis_degree")) {
        so.basis_degree = *d;
        require(*d >= 0, sol, "basis_degree", "must be non-negative");
    }
    assign(so.min_paths, sol.integer<long>("min_paths"));
    assign(so.picard_iters, sol.integer<int>("picard_iters"));
    assign(so.picard_tol, sol.real("picard_tol"));
    assign(so.damping, sol.real("damping"));
    assign(so.validation_paths, sol.integer<long>("validation_paths"));
    if (auto w = sol.list("policy_wealth")) so.policy_wealth = *w;
    require(so.picard_iters >= 1, sol, "picard_iters", "must be at least 1");
    require(so.picard_tol > 0.0, sol, "picard_tol", "must be positive");
    require(so.damping > 0.0 && so.damping <= 1.0, sol, "damping", "must be in (0, 1]");
    require(so.validation_paths > 0, sol, "validation_paths", "must be positive");
    require(so.min_paths > 0, sol, "min_paths", "must be positive");

    auto& v = cfg.verify;
    if (n_ok) {
        v.policy = ver.vector("policy", n);
        v.direction = ver.vector("direction", n);
    }
    parse_ladder(ver, "ladder", v.ladder);
    parse_ladder(ver, "expansion_ladder", v.expansion_ladder);
    assign(v.se_k, ver.real("se_k"));
    assign(v.slope_min, ver.real("slope_min"));
    assign(v.residual_tol, ver.real("residual_tol"));
    assign(v.wrong_residual_min, ver.real("wrong_residual_min"));
    assign(v.mhat_nodes, ver.integer<int>("mhat_nodes"));
    parse_K(ver, v.K);
    require(v.se_k > 0.0, ver, "se_k", "must be positive");
    require(v.residual_tol > 0.0, ver, "residual_tol", "must be positive");
    require(v.mhat_nodes >= 1, ver, "mhat_nodes", "must be at least 1");

    auto& s = cfg.search;
    if (auto m = sea.text("method")) {
        s.method = *m;
        require(s.method == "grid" || s.method == "ascent", sea, "method", "must be grid or ascent");
    }
    if (n_ok) {
        s.lower = sea.vector("lower", n);
        s.upper = sea.vector("upper", n);
        s.start = sea.vector("start", n);
    }
    assign(s.step, sea.real("step"));
    parse_units(sea, s.units);
    assign(s.crn, sea.boolean("crn"));
    assign(s.ascent_step, sea.real("ascent_step"));
    assign(s.ascent_tol, sea.real("ascent_tol"));
    assign(s.ascent_max_iters, sea.integer<int>("ascent_max_iters"));
    parse_K(sea, s.K);
    require(s.step > 0.0, sea, "step", "must be positive");
    require(s.ascent_step >= 0.0, sea, "ascent_step", "must be non-negative");
    require(s.ascent_tol > 0.0, sea, "ascent_tol", "must be positive");
    require(s.ascent_max_iters >= 0, sea, "ascent_max_iters", "must be non-negative");
    if (s.lower && s.upper && ((*s.upper).array() < (*s.lower).array()).any())
        sea.error("upper", "must not be below lower");
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error("config: " + join_errors(errors)), errors_(std::move(errors))
{
}

ExperimentConfig parse_config(const std::string& text)
{
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({fmt::format("line {}: {}", e.line(), e.message())});
    }

    static const std::set<std::string> known{"market", "regime", "utility", "simulation", "simulate",
                                             "solve",  "verify", "search",  "output"};
    std::vector<std::string> errors;
    for (const auto& [k, v] : tree) {
        if (!known.count(k)) errors.push_back(fmt::format("unknown section [{}]", k));
        else if (v.empty() && !v.data().empty())
            errors.push_back(fmt::format("key '{}' outside any section", k));
    }

    auto section = [&](const char* name) {
        const auto it = tree.find(name);
        return Section(it == tree.not_found() ? nullptr : &it->second, name, errors);
    };
    Section market = section("market");
    Section regime = section("regime");
    Section utility = section("utility");
    Section simulation = section("simulation");
    Section simulate = section("simulate");
    Section solve = section("solve");
    Section verify = section("verify");
    Section search = section("search");
    Section output = section("output");

    ExperimentConfig cfg;
    cfg.source_text = text;
    if (!market.present()) errors.emplace_back("missing section [market]");
    if (!utility.present()) errors.emplace_back("missing section [utility]");
    if (market.present()) parse_market(market, regime, cfg);
    if (utility.present()) parse_utility(utility, cfg);
    parse_simulation(simulation, cfg);
    parse_tasks(simulate, solve, verify, search, cfg);
    if (auto p = output.text("prefix")) cfg.output_prefix = *p;

    if (cfg.market.n_steps == 0 && cfg.market.T > 0.0 && cfg.simulation.dt > 0.0) {
        const double ratio = cfg.market.T / cfg.simulation.dt;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio) || ratio < 0.5)
            errors.push_back(fmt::format("[simulation] dt: T/dt = {} is not a whole number of steps", ratio));
        else
            cfg.market.n_steps = static_cast<int>(std::lround(ratio));
    }
    if ((cfg.utility.kind == "log" || cfg.utility.kind == "power") && !(cfg.market.x0 > 0.0))
        errors.push_back(fmt::format("[market] x0: must be positive for {} utility", cfg.utility.kind));

    for (Section* s : {&market, &regime, &utility, &simulation, &simulate, &solve, &verify, &search, &output})
        s->finish();
    if (!errors.empty()) throw ConfigError(std::move(errors));
    return cfg;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError({fmt::format("cannot read config file '{}'", path)});
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace merton
