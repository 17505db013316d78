#pragma once

#include "merton/config.hpp"
#include "merton/market_model.hpp"
#include "merton/utility.hpp"

#include <optional>
#include <string>
#include <vector>

namespace merton {

enum class Task { simulate, solve, verify, search };

std::optional<Task> parse_task(const std::string& name);
std::string to_string(Task task);

struct RunOptions {
    std::string out_prefix;  // overrides [output] prefix when non-empty
    bool quiet = false;
};

/// One line of the verify CSV.
struct VerifyRow {
    std::string statistic;
    double value = 0.0;
    double std_error = 0.0;  // NaN when not applicable
    double threshold = 0.0;
    bool pass = false;
};

struct RunResult {
    Task task = Task::simulate;
    std::string run_id;
    double wall_seconds = 0.0;
    std::vector<std::string> files;
    std::vector<VerifyRow> checks;       // verify only
    std::optional<bool> verify_passed;   // verify only
    int exit_code = 0;                   // 0 ok, 1 task failure, 2 config error
    std::string message;                 // error text when exit_code != 0
};

/// Hex FNV-1a of the config text, the task and the seed.
std::string run_id(const ExperimentConfig& config, Task task);

/// Market and utility described by a parsed config. Bound violations
/// surface as ConfigError.
MarketModel market_from_config(const ExperimentConfig& config);
Utility utility_from_config(const ExperimentConfig& config);

/// Dispatches a task and writes its CSVs. Never throws for task or config
/// failures; those are reported through exit_code and message.
RunResult run(const ExperimentConfig& config, Task task, const RunOptions& options = {});

/// Environment variable that overrides [simulation] workers.
inline constexpr const char* kWorkersEnv = "MERTON_WORKERS";

}  // namespace merton
