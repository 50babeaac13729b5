#pragma once

#include <optional>
#include <string>

#include "longrun/scenario.hpp"

namespace longrun {

struct RunOptions {
    std::string out_dir = ".";
    int threads = 1;
    std::optional<std::uint64_t> seed_override;
    bool stamp_time = false;  // default --stamp none: byte-deterministic output
};

struct RunOutcome {
    /// 0 all thresholds pass, 1 a task-level threshold failed,
    /// 3 failed precondition, 4 numerical abort.
    int exit_code = 0;
    std::string message;      // populated for exit codes 3 and 4
    std::string report_json;  // serialized report (also written to out_dir)
};

/// Executes the scenario's task list in order and writes report.json plus
/// per-table CSV and SVG artifacts into out_dir.
RunOutcome run_scenario(const Scenario& scenario, const RunOptions& options);

}  // namespace longrun
