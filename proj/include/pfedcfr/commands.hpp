// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pfedcfr {

// Parsed command line, shared by the three subcommands.
struct CliOptions {
    std::string config_path;
    std::vector<std::string> methods;    // compare: methods to run
    std::vector<int> r_values;           // sweep-r: thresholds to run
    std::optional<std::string> out_dir;  // --out override
    std::optional<std::uint64_t> seed;   // --seed override (reseeds everything)
    bool dump_weights = false;
};

// Exit codes: 0 success, 1 runtime failure, 2 config error.
int cmd_run(const CliOptions& opts);
int cmd_compare(const CliOptions& opts);
int cmd_sweep_r(const CliOptions& opts);

}  // namespace pfedcfr
