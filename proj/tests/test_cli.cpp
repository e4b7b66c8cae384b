// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfedcfr/config.hpp"

using namespace pfedcfr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("pfedcfr_cli_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// Runs the CLI binary, returns its exit code; stdout/stderr land in files
// next to the given directory.
int run_cli(const TempDir& tmp, const std::string& args) {
    std::string cmd = std::string(PFEDCFR_BIN) + " " + args + " > " +
                      (tmp.path / "stdout.txt").string() + " 2> " +
                      (tmp.path / "stderr.txt").string();
    int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const char* kBaseConfig = R"({
  "method": "pfedcfr",
  "out_dir": "OUTDIR",
  "model": { "hidden": [8], "feature_layers": 1 },
  "dataset": {
    "type": "synthetic",
    "num_clusters": 2,
    "samples_per_class": 20,
    "dim": 6,
    "num_classes": 4,
    "blob_std": 1.0,
    "separation": 3.0,
    "seed": 0
  },
  "partition": {
    "num_clients": 4,
    "labels_per_client": 2,
    "lognormal_sigma": 1.0,
    "train_test_ratio": 0.75,
    "seed": 0
  },
  "training": {
    "rounds": 3,
    "local_steps": 2,
    "batch_size": 8,
    "eta": 0.05,
    "seed": 0
  }
})";

std::string base_config(const fs::path& out_dir) {
    std::string text = kBaseConfig;
    auto pos = text.find("OUTDIR");
    text.replace(pos, 6, out_dir.string());
    return text;
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

}  // namespace

TEST_CASE("config parsing: happy path and defaults") {
    std::string text = base_config("/tmp/x");
    ExperimentConfig cfg = parse_experiment_config(text, "test");
    CHECK(cfg.training.method == Method::kPFedCfr);
    CHECK(cfg.model.hidden == std::vector<int>{8});
    CHECK(cfg.model.feature_layers == 1);
    CHECK(cfg.dataset.source == DatasetConfig::Source::kSynthetic);
    CHECK(cfg.dataset.synthetic.num_classes == 4);
    CHECK(cfg.partition.num_clients == 4);
    CHECK(cfg.training.rounds == 3);
    CHECK(cfg.training.eta == 0.05);
    CHECK_FALSE(cfg.training.threshold_r.has_value());
    CHECK(cfg.out_dir == "/tmp/x");
    // Unset knobs keep the engine defaults.
    CHECK(cfg.training.sim.alpha_t == 1e4);
    CHECK(cfg.training.sim.sigma == 1e6);
    CHECK(cfg.training.sim.lambda == 1.0);
    CHECK(cfg.training.sim.mu == 0.001);
    CHECK_FALSE(cfg.training.install_personalized_layers);

    ExperimentConfig minimal = parse_experiment_config(R"({
      "method": "fedavg",
      "model": { "hidden": [] },
      "dataset": { "type": "synthetic" },
      "partition": {},
      "training": {}
    })", "test");
    CHECK(minimal.training.rounds == 100);
    CHECK(minimal.training.local_steps == 10);
    CHECK(minimal.training.batch_size == 32);
    CHECK(minimal.training.eta == 0.005);
    CHECK(minimal.out_dir == "results");
    CHECK(minimal.model.hidden.empty());
}

TEST_CASE("config parsing: diagnostics name the offending field") {
    auto fails_with = [](const std::string& text, const std::string& needle) {
        CHECK_THROWS_WITH_AS(parse_experiment_config(text, "test"),
                             doctest::Contains(needle.c_str()), ConfigError);
    };

    fails_with(R"({"model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{}})",
               "method");
    fails_with(R"({"method":"sgd","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{}})",
               "unknown method");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{},"extra":1})",
               "extra");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{"batch_sizee":16}})",
               "training.batch_sizee");
    fails_with(R"({"method":"fedavg","model":{},"dataset":{"type":"synthetic"},"partition":{},"training":{}})",
               "model.hidden");
    fails_with(R"({"method":"fedavg","model":{"hidden":[0]},"dataset":{"type":"synthetic"},"partition":{},"training":{}})",
               "model.hidden");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4],"feature_layers":5},"dataset":{"type":"synthetic"},"partition":{},"training":{}})",
               "model.feature_layers");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"csv"},"partition":{},"training":{}})",
               "dataset.type");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic","num_classes":9,"num_clusters":2},"partition":{},"training":{}})",
               "num_classes");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"idx","images":"/nope/img","labels":"/nope/lbl"},"partition":{},"training":{}})",
               "dataset.images");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{"num_clients":1},"training":{}})",
               "partition.num_clients");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{"train_test_ratio":1.0},"training":{}})",
               "partition.train_test_ratio");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{"r":3}})",
               "training.r");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{"eta":0}})",
               "training.eta");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{"seed":-1}})",
               "training.seed");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{"rounds":"many"}})",
               "training.rounds");
    fails_with(R"({"method":"fedavg","model":{"hidden":[4]},"dataset":{"type":"synthetic"},"partition":{},"training":{"install_personalized_layers":1}})",
               "install_personalized_layers");
    fails_with("{not json", "test");
}

TEST_CASE("model spec construction from config") {
    ModelConfig m;
    m.hidden = {16, 8};
    m.feature_layers = 2;
    ModelSpec spec = build_model_spec(m, 10, 4);
    CHECK(spec.depth() == 3);
    CHECK(spec.input_dim() == 10);
    CHECK(spec.num_classes() == 4);
    CHECK(spec.num_feature_layers() == 2);
    CHECK(spec.layer(0).fan_out == 16);
    CHECK(spec.layer(1).fan_out == 8);
    CHECK(spec.layer(0).activation == Activation::kRelu);
    CHECK(spec.layer(2).activation == Activation::kIdentity);
    CHECK(spec.layer(2).role == LayerRole::kDecision);

    ModelConfig flat;
    flat.hidden = {};
    flat.feature_layers = 0;
    ModelSpec lr = build_model_spec(flat, 5, 3);
    CHECK(lr.depth() == 1);
    CHECK(lr.num_feature_layers() == 0);
}

TEST_CASE("seed override touches every stream") {
    ExperimentConfig cfg = parse_experiment_config(base_config("/tmp/x"), "test");
    apply_seed_override(cfg, 1234);
    CHECK(cfg.dataset.synthetic.seed == 1234);
    CHECK(cfg.dataset.subset_seed == 1234);
    CHECK(cfg.partition.seed == 1234);
    CHECK(cfg.training.seed == 1234);
}

TEST_CASE("cmd_run writes the promised files") {
    TempDir tmp;
    fs::path cfg_path = tmp.path / "exp.json";
    fs::path out = tmp.path / "out";
    spit(cfg_path, base_config(out));

    int rc = run_cli(tmp, "run " + cfg_path.string());
    CHECK(rc == 0);

    std::string metrics = slurp(out / "metrics.csv");
    CHECK(count_lines(metrics) == 1 + 3 * 4);  // header + rounds x clients
    CHECK(metrics.rfind("round,client,train_loss,test_loss,test_acc\n", 0) == 0);

    auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
    CHECK(summary["method"] == "pfedcfr");
    CHECK(summary["rounds"] == 3);
    CHECK(summary["clients"] == 4);
    double acc_mean = summary["acc_mean"].get<double>();
    CHECK(acc_mean >= 0.0);
    CHECK(acc_mean <= 1.0);

    // summary.json equals the mean over the last min(5, T) rounds of the CSV.
    std::istringstream in(metrics);
    std::string line;
    std::getline(in, line);  // header
    double sum = 0.0;
    int count = 0;
    while (std::getline(in, line)) {
        auto last_comma = line.rfind(',');
        sum += std::stod(line.substr(last_comma + 1));
        ++count;
    }
    REQUIRE(count == 12);
    CHECK(std::fabs(acc_mean - sum / count) <= 1e-12);
}

TEST_CASE("cmd_run is byte-deterministic and --seed changes the run") {
    TempDir tmp;
    fs::path cfg_path = tmp.path / "exp.json";
    spit(cfg_path, base_config(tmp.path / "out1"));

    CHECK(run_cli(tmp, "run " + cfg_path.string()) == 0);
    std::string first = slurp(tmp.path / "out1" / "metrics.csv");
    CHECK(run_cli(tmp, "run " + cfg_path.string() + " --out " + (tmp.path / "out2").string()) ==
          0);
    std::string second = slurp(tmp.path / "out2" / "metrics.csv");
    CHECK(first == second);

    CHECK(run_cli(tmp, "run " + cfg_path.string() + " --out " + (tmp.path / "out3").string() +
                           " --seed 9") == 0);
    std::string reseeded = slurp(tmp.path / "out3" / "metrics.csv");
    CHECK(first != reseeded);
}

TEST_CASE("cmd_run dumps row-stochastic weight matrices on request") {
    TempDir tmp;
    fs::path cfg_path = tmp.path / "exp.json";
    fs::path out = tmp.path / "out";
    spit(cfg_path, base_config(out));

    CHECK(run_cli(tmp, "run " + cfg_path.string() + " --dump-weights") == 0);
    for (int t = 1; t <= 3; ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "weights_round_%04d.csv", t);
        std::string text = slurp(out / name);
        REQUIRE_FALSE(text.empty());
        std::istringstream in(text);
        std::string line;
        std::getline(in, line);
        CHECK(line == "layer,client,w0,w1,w2,w3");
        int rows = 0;
        while (std::getline(in, line)) {
            ++rows;
            std::istringstream cells(line);
            std::string cell;
            std::getline(cells, cell, ',');  // layer
            std::getline(cells, cell, ',');  // client
            double sum = 0.0;
            while (std::getline(cells, cell, ',')) sum += std::stod(cell);
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
        CHECK(rows == 2 * 4);  // layers x clients
    }
}

TEST_CASE("config errors exit 2 with a diagnostic on stderr") {
    TempDir tmp;
    fs::path cfg_path = tmp.path / "exp.json";
    std::string text = base_config(tmp.path / "out");
    text.replace(text.find("\"rounds\""), 8, "\"roundz\"");
    spit(cfg_path, text);

    CHECK(run_cli(tmp, "run " + cfg_path.string()) == 2);
    std::string err = slurp(tmp.path / "stderr.txt");
    CHECK(err.find("roundz") != std::string::npos);

    CHECK(run_cli(tmp, "run " + (tmp.path / "missing.json").string()) == 2);
    CHECK(run_cli(tmp, "") == 2);           // no subcommand
    CHECK(run_cli(tmp, "frobnicate x") == 2);  // unknown subcommand
}

TEST_CASE("runtime failures exit 1") {
    TempDir tmp;
    fs::path cfg_path = tmp.path / "exp.json";
    std::string text = base_config(tmp.path / "out");
    // Absurd coupling makes round-1 fusion weights non-contractive.
    text.replace(text.find("\"rounds\": 3"), 11, "\"rounds\": 3, \"alpha_t\": 1e12, \"sigma\": 1.0");
    spit(cfg_path, text);
    CHECK(run_cli(tmp, "run " + cfg_path.string()) == 1);
    std::string err = slurp(tmp.path / "stderr.txt");
    CHECK(err.find("non-contractive") != std::string::npos);
}

TEST_CASE("cmd_compare ranks methods and matches cmd_run on a single method") {
    TempDir tmp;
    fs::path cfg_path = tmp.path / "exp.json";
    fs::path out = tmp.path / "out";
    spit(cfg_path, base_config(out));

    CHECK(run_cli(tmp, "compare " + cfg_path.string() + " --methods fedavg,pfedcfr") == 0);
    std::string table = slurp(out / "compare.csv");
    std::istringstream in(table);
    std::string header, row1, row2;
    std::getline(in, header);
    CHECK(header == "method,final_acc_mean,final_acc_std");
    REQUIRE(std::getline(in, row1));
    REQUIRE(std::getline(in, row2));
    auto mean_of = [](const std::string& row) {
        auto first = row.find(',');
        auto second = row.find(',', first + 1);
        return std::stod(row.substr(first + 1, second - first - 1));
    };
    CHECK(mean_of(row1) >= mean_of(row2));  // sorted descending

    // A single-method compare agrees exactly with cmd_run's summary.
    CHECK(run_cli(tmp, "compare " + cfg_path.string() + " --methods pfedcfr --out " +
                           (tmp.path / "solo").string()) == 0);
    CHECK(run_cli(tmp, "run " + cfg_path.string() + " --out " + (tmp.path / "ref").string()) ==
          0);
    auto summary = nlohmann::json::parse(slurp(tmp.path / "ref" / "summary.json"));
    std::istringstream solo(slurp(tmp.path / "solo" / "compare.csv"));
    std::string line;
    std::getline(solo, line);
    REQUIRE(std::getline(solo, line));
    CHECK(line.rfind("pfedcfr,", 0) == 0);
    auto first = line.find(',');
    auto second = line.find(',', first + 1);
    CHECK(std::stod(line.substr(first + 1, second - first - 1)) ==
          summary["acc_mean"].get<double>());
    CHECK(std::stod(line.substr(second + 1)) == summary["acc_std"].get<double>());

    CHECK(run_cli(tmp, "compare " + cfg_path.string() + " --methods dittos") == 2);
    CHECK(run_cli(tmp, "compare " + cfg_path.string() + " --methods \"\"") == 2);
    CHECK(run_cli(tmp, "compare " + cfg_path.string()) == 2);  // --methods required
}

TEST_CASE("cmd_sweep_r covers thresholds, dedupes, and hits the fedprox reduction") {
    TempDir tmp;
    fs::path cfg_path = tmp.path / "exp.json";
    fs::path out = tmp.path / "out";
    spit(cfg_path, base_config(out));

    CHECK(run_cli(tmp, "sweep-r " + cfg_path.string() + " --r 2,0,0") == 0);
    std::string warn = slurp(tmp.path / "stderr.txt");
    CHECK(warn.find("duplicate r value 0") != std::string::npos);
    std::istringstream in(slurp(out / "sweep.csv"));
    std::string header, row0, row2, extra;
    std::getline(in, header);
    CHECK(header == "r,final_acc_mean,final_acc_std");
    REQUIRE(std::getline(in, row0));
    REQUIRE(std::getline(in, row2));
    CHECK_FALSE(std::getline(in, extra));  // deduplicated to two rows
    CHECK(row0.rfind("0,", 0) == 0);
    CHECK(row2.rfind("2,", 0) == 0);

    // r=0 reduces to fedprox: identical summary numbers.
    CHECK(run_cli(tmp, "compare " + cfg_path.string() + " --methods fedprox --out " +
                           (tmp.path / "prox").string()) == 0);
    std::istringstream prox_in(slurp(tmp.path / "prox" / "compare.csv"));
    std::string line;
    std::getline(prox_in, line);
    REQUIRE(std::getline(prox_in, line));
    auto tail = [](const std::string& row) { return row.substr(row.find(',') + 1); };
    CHECK(tail(row0) == tail(line));

    CHECK(run_cli(tmp, "sweep-r " + cfg_path.string() + " --r 7") == 2);  // r > depth
    CHECK(run_cli(tmp, "sweep-r " + cfg_path.string()) == 2);             // --r required
}
