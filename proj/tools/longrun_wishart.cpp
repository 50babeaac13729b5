// Scenario-driven batch front end: parse a scenario file, run the
// configured checks/solves/simulations, and emit machine- and
// human-readable reports.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "longrun/report.hpp"
#include "longrun/scenario.hpp"

namespace {

int default_threads() {
    if (const char* env = std::getenv("LONGRUN_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

longrun::Scenario load_scenario(const std::string& path,
                                const std::vector<std::string>& overrides) {
    longrun::ScenarioDoc doc = longrun::ScenarioDoc::parse_file(path);
    for (const std::string& ov : overrides) {
        const size_t eq = ov.find('=');
        if (eq == std::string::npos) {
            throw longrun::ScenarioValidationError("--override expects key=value, got '" +
                                                   ov + "'");
        }
        doc.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    return longrun::Scenario::from_doc(doc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"longrun-wishart: long-horizon optimal investment engine for "
                 "Wishart-type factor models"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string out_dir = "out";
    int threads = default_threads();
    std::optional<std::uint64_t> seed;
    std::string stamp = "none";
    std::vector<std::string> overrides;

    CLI::App* run = app.add_subcommand("run", "Run a scenario and write reports");
    run->add_option("scenario", scenario_path, "Scenario file (TOML)")->required();
    run->add_option("--out", out_dir, "Output directory for report artifacts");
    run->add_option("--threads", threads, "Worker cap (default: LONGRUN_THREADS or 1)");
    run->add_option("--seed", seed, "Override sim.master_seed");
    run->add_option("--stamp", stamp, "none | time (timestamps in report.json)")
        ->check(CLI::IsMember({"none", "time"}));
    run->add_option("--override", overrides,
                    "key=value scenario overrides (repeatable)");

    std::string validate_path;
    CLI::App* validate =
        app.add_subcommand("validate", "Parse and consistency-check a scenario");
    validate->add_option("scenario", validate_path, "Scenario file (TOML)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            longrun::Scenario scenario = load_scenario(scenario_path, overrides);
            longrun::RunOptions options;
            options.out_dir = out_dir;
            options.threads = threads;
            options.seed_override = seed;
            options.stamp_time = (stamp == "time");
            longrun::RunOutcome outcome = longrun::run_scenario(scenario, options);
            if (outcome.exit_code == 3) {
                std::cerr << "precondition failed: " << outcome.message << "\n";
            } else if (outcome.exit_code == 4) {
                std::cerr << "numerical abort: " << outcome.message << "\n";
            } else {
                std::cout << "report written to " << out_dir << "/report.json"
                          << (outcome.exit_code == 0 ? " (all thresholds passed)"
                                                     : " (threshold failures)")
                          << "\n";
            }
            return outcome.exit_code;
        }
        longrun::Scenario scenario = load_scenario(validate_path, {});
        scenario.build_spec();  // provider and dimension resolution
        std::cout << "ok: " << validate_path << " parses and is consistent ("
                  << scenario.tasks.size() << " tasks)\n";
        return 0;
    } catch (const longrun::ScenarioParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const longrun::ScenarioValidationError& e) {
        std::cerr << "scenario error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "precondition failed: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
