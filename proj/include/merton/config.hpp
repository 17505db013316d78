#pragma once

#include "merton/types.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace merton {

/// Every problem found while parsing, not just the first.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const noexcept { return errors_; }

private:
    std::vector<std::string> errors_;
};

struct RegimeConfig {
    int states = 0;
    Eigen::MatrixXd generator;
    std::vector<double> rate;     // per state
    std::vector<Vec> alpha;       // per state
    std::vector<Mat> sigma;       // per state
};

struct MarketConfig {
    int n_assets = 0;
    double r = 0.0;
    Vec alpha;
    Mat sigma;
    double x0 = 1.0;
    double T = 1.0;
    int n_steps = 0;  // resolved from simulation.dt when not given
    double bound_M = 0.0;
    double eps = 0.0;
    double C = 0.0;
    std::optional<RegimeConfig> regime;
};

struct UtilityConfig {
    std::string kind;
    double eta = 0.0;
    double gamma = 0.0;
};

struct SimulationConfig {
    long n_paths = 10000;
    std::uint64_t seed = 1;
    double dt = 1.0 / 250.0;
    int workers = 0;  // 0: runtime default
    bool antithetic = true;
};

struct SimulateConfig {
    std::optional<Vec> policy;  // closed form when absent
    std::string units;          // weights | dollars, by utility when empty
    double K = kDefaultStopThreshold;
    bool prices = false;
};

struct SolveConfig {
    std::string mode = "auto";  // auto | ode | regression | picard
    int basis_degree = -1;      // 3 (regression) or 1 (picard) when unset
    long min_paths = 100;
    int picard_iters = 20;
    double picard_tol = 1e-4;
    double damping = 0.5;
    long validation_paths = 1000;
    std::vector<double> policy_wealth;  // wealth samples for the policy table (picard)
};

struct VerifyConfig {
    std::optional<Vec> policy;  // π* when absent
    std::optional<Vec> direction;  // ones when absent
    std::vector<double> ladder{0.1, 0.05, 0.025, 0.0125};
    std::vector<double> expansion_ladder{0.1, 0.05, 0.025};
    double se_k = 3.0;
    double slope_min = 1.5;
    double residual_tol = 1e-8;
    double wrong_residual_min = 1e-3;
    int mhat_nodes = 10;
    double K = kDefaultStopThreshold;
};

struct SearchConfig {
    std::string method = "grid";  // grid | ascent
    std::optional<Vec> lower;
    std::optional<Vec> upper;
    double step = 0.05;
    std::string units;  // weights | dollars, by utility when empty
    bool crn = true;
    std::optional<Vec> start;
    double ascent_step = 0.0;
    double ascent_tol = 1e-4;
    int ascent_max_iters = 200;
    double K = kDefaultStopThreshold;
};

struct ExperimentConfig {
    MarketConfig market;
    UtilityConfig utility;
    SimulationConfig simulation;
    SimulateConfig simulate;
    SolveConfig solve;
    VerifyConfig verify;
    SearchConfig search;
    std::string output_prefix = "merton";
    std::string source_text;  // verbatim input, hashed into the run id
};

/// Sectioned key = value text ('#' or ';' comments). Throws ConfigError.
ExperimentConfig parse_config(const std::string& text);

/// Reads the file then parses it; unreadable files are ConfigErrors too.
ExperimentConfig load_config(const std::string& path);

}  // namespace merton
