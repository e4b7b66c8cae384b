// SPDX-License-Identifier: Apache-2.0

#include "pfedcfr/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "pfedcfr/config.hpp"
#include "pfedcfr/runtime.hpp"

namespace pfedcfr {

namespace {

namespace fs = std::filesystem;

// Full-precision, locale-independent float formatting so CSV output is a
// deterministic byte stream.
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Prepared {
    ExperimentConfig cfg;
    ModelSpec spec;
    std::vector<ClientShard> shards;
};

Prepared prepare(const CliOptions& opts) {
    ExperimentConfig cfg = load_experiment_config(opts.config_path);
    if (opts.seed) apply_seed_override(cfg, *opts.seed);
    if (opts.out_dir) cfg.out_dir = *opts.out_dir;
    Dataset ds = load_dataset(cfg.dataset);
    ModelSpec spec = build_model_spec(cfg.model, ds.dim(), ds.num_classes);
    std::vector<ClientShard> shards = partition_heterogeneous(ds, cfg.partition);
    return Prepared{std::move(cfg), std::move(spec), std::move(shards)};
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

void write_metrics_csv(const fs::path& path, const std::vector<RoundMetrics>& metrics) {
    std::ofstream out = open_out(path);
    out << "round,client,train_loss,test_loss,test_acc\n";
    for (const auto& m : metrics) {
        for (std::size_t i = 0; i < m.test_acc.size(); ++i) {
            out << m.round << ',' << i << ',' << fmt(m.train_loss[i]) << ','
                << fmt(m.test_loss[i]) << ',' << fmt(m.test_acc[i]) << '\n';
        }
    }
}

struct Summary {
    double acc_mean = 0.0;
    double acc_std = 0.0;
};

// Mean and population std of per-client accuracy over the last
// min(5, T) rounds — the "final accuracy" every report uses.
Summary final_summary(const std::vector<RoundMetrics>& metrics) {
    std::size_t window = std::min<std::size_t>(5, metrics.size());
    std::vector<double> accs;
    for (std::size_t t = metrics.size() - window; t < metrics.size(); ++t) {
        accs.insert(accs.end(), metrics[t].test_acc.begin(), metrics[t].test_acc.end());
    }
    Summary s;
    for (double a : accs) s.acc_mean += a;
    s.acc_mean /= static_cast<double>(accs.size());
    double var = 0.0;
    for (double a : accs) var += (a - s.acc_mean) * (a - s.acc_mean);
    s.acc_std = std::sqrt(var / static_cast<double>(accs.size()));
    return s;
}

void write_summary_json(const fs::path& path, const std::string& method, int rounds,
                        int clients, const Summary& s) {
    nlohmann::json j;
    j["method"] = method;
    j["rounds"] = rounds;
    j["clients"] = clients;
    j["acc_mean"] = s.acc_mean;
    j["acc_std"] = s.acc_std;
    std::ofstream out = open_out(path);
    out << j.dump(2) << '\n';
}

void write_weight_dumps(const fs::path& dir, const std::vector<WeightMatrix>& log) {
    for (std::size_t t = 0; t < log.size(); ++t) {
        const WeightMatrix& wm = log[t];
        char name[32];
        std::snprintf(name, sizeof name, "weights_round_%04zu.csv", t + 1);
        std::ofstream out = open_out(dir / name);
        out << "layer,client";
        for (int m = 0; m < wm.num_clients; ++m) out << ",w" << m;
        out << '\n';
        for (std::size_t l = 0; l < wm.per_layer.size(); ++l) {
            const Matrix& w = wm.per_layer[l];
            for (int n = 0; n < w.rows; ++n) {
                out << (l + 1) << ',' << n;
                for (int m = 0; m < w.cols; ++m) out << ',' << fmt(w.at(n, m));
                out << '\n';
            }
        }
    }
}

// Maps library errors to the documented exit codes.
int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int cmd_run(const CliOptions& opts) {
    return guarded([&] {
        Prepared p = prepare(opts);
        fs::create_directories(p.cfg.out_dir);
        std::vector<WeightMatrix> weight_log;
        std::vector<RoundMetrics> metrics =
            run_experiment(p.spec, p.shards, p.cfg.training,
                           opts.dump_weights ? &weight_log : nullptr);
        for (const auto& m : metrics) {
            std::cout << "round " << m.round << '/' << p.cfg.training.rounds
                      << "  train_loss " << fmt(m.train_loss_mean) << "  acc "
                      << fmt(m.acc_mean) << '\n';
        }
        write_metrics_csv(fs::path(p.cfg.out_dir) / "metrics.csv", metrics);
        Summary s = final_summary(metrics);
        write_summary_json(fs::path(p.cfg.out_dir) / "summary.json",
                           method_name(p.cfg.training.method), p.cfg.training.rounds,
                           static_cast<int>(p.shards.size()), s);
        if (opts.dump_weights) write_weight_dumps(p.cfg.out_dir, weight_log);
        std::cout << method_name(p.cfg.training.method) << ": final acc " << fmt(s.acc_mean)
                  << " +- " << fmt(s.acc_std) << "  -> " << p.cfg.out_dir << '\n';
        return 0;
    });
}

int cmd_compare(const CliOptions& opts) {
    return guarded([&] {
        if (opts.methods.empty()) throw ConfigError("compare: --methods must not be empty");
        std::vector<Method> methods;
        for (const auto& name : opts.methods) {
            auto m = parse_method(name);
            if (!m) throw ConfigError("compare: unknown method \"" + name + "\"");
            methods.push_back(*m);
        }
        Prepared p = prepare(opts);
        fs::create_directories(p.cfg.out_dir);

        struct Row {
            std::string method;
            Summary s;
        };
        std::vector<Row> rows;
        for (Method m : methods) {
            MethodConfig tc = p.cfg.training;
            tc.method = m;
            std::vector<RoundMetrics> metrics = run_experiment(p.spec, p.shards, tc, nullptr);
            Summary s = final_summary(metrics);
            std::cout << method_name(m) << ": final acc " << fmt(s.acc_mean) << " +- "
                      << fmt(s.acc_std) << '\n';
            rows.push_back({method_name(m), s});
        }
        std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
            if (a.s.acc_mean != b.s.acc_mean) return a.s.acc_mean > b.s.acc_mean;
            return a.method < b.method;
        });
        std::ofstream out = open_out(fs::path(p.cfg.out_dir) / "compare.csv");
        out << "method,final_acc_mean,final_acc_std\n";
        for (const auto& r : rows) {
            out << r.method << ',' << fmt(r.s.acc_mean) << ',' << fmt(r.s.acc_std) << '\n';
        }
        std::cout << "wrote " << (fs::path(p.cfg.out_dir) / "compare.csv").string() << '\n';
        return 0;
    });
}

int cmd_sweep_r(const CliOptions& opts) {
    return guarded([&] {
        if (opts.r_values.empty()) throw ConfigError("sweep-r: --r must not be empty");
        std::vector<int> rs;
        for (int r : opts.r_values) {
            if (std::find(rs.begin(), rs.end(), r) != rs.end()) {
                std::cerr << "warning: duplicate r value " << r << " ignored\n";
                continue;
            }
            rs.push_back(r);
        }
        std::sort(rs.begin(), rs.end());

        Prepared p = prepare(opts);
        for (int r : rs) {
            if (r < 0 || r > p.spec.depth()) {
                throw ConfigError("sweep-r: r=" + std::to_string(r) + " must be in [0, " +
                                  std::to_string(p.spec.depth()) + "] for this model");
            }
        }
        fs::create_directories(p.cfg.out_dir);

        std::ofstream out = open_out(fs::path(p.cfg.out_dir) / "sweep.csv");
        out << "r,final_acc_mean,final_acc_std\n";
        for (int r : rs) {
            MethodConfig tc = p.cfg.training;
            tc.method = Method::kPFedCfr;
            tc.threshold_r = r;
            std::vector<RoundMetrics> metrics = run_experiment(p.spec, p.shards, tc, nullptr);
            Summary s = final_summary(metrics);
            std::cout << "r=" << r << ": final acc " << fmt(s.acc_mean) << " +- "
                      << fmt(s.acc_std) << '\n';
            out << r << ',' << fmt(s.acc_mean) << ',' << fmt(s.acc_std) << '\n';
        }
        std::cout << "wrote " << (fs::path(p.cfg.out_dir) / "sweep.csv").string() << '\n';
        return 0;
    });
}

}  // namespace pfedcfr
