#include "merton/runner.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"Merton expected-utility lab"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::string out_prefix;
    bool quiet = false;

    for (const char* name : {"simulate", "solve", "verify", "search"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config file")->required();
        sub->add_option("--out", out_prefix, "output path prefix");
        sub->add_flag("--quiet", quiet, "print nothing on success");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const auto task = merton::parse_task(app.get_subcommands().front()->get_name());

    merton::ExperimentConfig config;
    try {
        config = merton::load_config(config_path);
    } catch (const merton::ConfigError& e) {
        for (const auto& msg : e.errors()) std::cerr << "config error: " << msg << '\n';
        return 2;
    }

    const merton::RunResult r = merton::run(config, *task, {out_prefix, quiet});
    if (r.exit_code != 0) {
        std::cerr << (r.exit_code == 2 ? "config error: " : "error: ") << r.message << '\n';
    }
    if (!quiet || r.exit_code != 0) {
        std::cout << fmt::format("task={} run_id={} wall={:.3f}s exit={}\n", merton::to_string(r.task), r.run_id,
                                 r.wall_seconds, r.exit_code);
        for (const auto& c : r.checks)
            std::cout << fmt::format("  {:<32} {:>14.6g}  threshold {:<12.6g} {}\n", c.statistic, c.value,
                                     c.threshold, c.pass ? "pass" : "FAIL");
        for (const auto& f : r.files) std::cout << "  wrote " << f << '\n';
    }
    return r.exit_code;
}
