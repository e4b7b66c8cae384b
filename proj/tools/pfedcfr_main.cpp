// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pfedcfr/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Federated learning simulator with layer-based cross-fusion"};
    app.require_subcommand(1);

    pfedcfr::CliOptions opts;
    std::string out_dir;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("config", opts.config_path, "experiment config (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory (overrides config)");
        sub->add_option("--seed", seed, "override every seed in the config");
        sub->add_flag("--dump-weights", opts.dump_weights,
                      "write per-round fusion weight matrices");
    };

    CLI::App* run = app.add_subcommand("run", "run the configured method");
    add_common(run);

    CLI::App* compare = app.add_subcommand("compare", "run several methods on the same data");
    add_common(compare);
    compare->add_option("--methods", opts.methods, "comma-separated methods to run")
        ->required()
        ->delimiter(',');

    CLI::App* sweep = app.add_subcommand("sweep-r", "sweep the personalized fusion threshold");
    add_common(sweep);
    sweep->add_option("--r", opts.r_values, "comma-separated threshold values")
        ->required()
        ->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad usage is a config error
    }

    if (run->count("--out") || compare->count("--out") || sweep->count("--out")) {
        opts.out_dir = out_dir;
    }
    if (run->count("--seed") || compare->count("--seed") || sweep->count("--seed")) {
        opts.seed = seed;
    }

    if (run->parsed()) return pfedcfr::cmd_run(opts);
    if (compare->parsed()) return pfedcfr::cmd_compare(opts);
    return pfedcfr::cmd_sweep_r(opts);
}
