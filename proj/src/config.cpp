// SPDX-License-Identifier: Apache-2.0

#include "pfedcfr/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pfedcfr {

namespace {

using nlohmann::json;

std::string join_path(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

// Rejects keys outside the published schema so typos fail loudly.
void check_keys(const json& node, const std::string& prefix,
                const std::set<std::string>& allowed) {
    for (const auto& item : node.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError(join_path(prefix, item.key()) + ": unknown key");
        }
    }
}

const json& require_object(const json& node, const std::string& path) {
    if (!node.is_object()) throw ConfigError(path + ": expected an object");
    return node;
}

const json* find(const json& node, const std::string& key) {
    auto it = node.find(key);
    return it == node.end() ? nullptr : &*it;
}

double get_double(const json& node, const std::string& path, const std::string& key,
                  double fallback) {
    const json* v = find(node, key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(join_path(path, key) + ": expected a number");
    return v->get<double>();
}

long long get_int(const json& node, const std::string& path, const std::string& key,
                  long long fallback) {
    const json* v = find(node, key);
    if (!v) return fallback;
    if (!v->is_number_integer() && !v->is_number_unsigned()) {
        throw ConfigError(join_path(path, key) + ": expected an integer");
    }
    return v->get<long long>();
}

std::uint64_t get_seed(const json& node, const std::string& path, const std::string& key,
                       std::uint64_t fallback) {
    const json* v = find(node, key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<long long>() >= 0) {
        return static_cast<std::uint64_t>(v->get<long long>());
    }
    throw ConfigError(join_path(path, key) + ": expected a non-negative integer");
}

std::string get_string(const json& node, const std::string& path, const std::string& key) {
    const json* v = find(node, key);
    if (!v) throw ConfigError(join_path(path, key) + ": missing required key");
    if (!v->is_string()) throw ConfigError(join_path(path, key) + ": expected a string");
    return v->get<std::string>();
}

void require_positive(long long value, const std::string& field) {
    if (value < 1) throw ConfigError(field + ": must be >= 1");
}

ModelConfig parse_model(const json& node) {
    require_object(node, "model");
    check_keys(node, "model", {"hidden", "feature_layers"});
    ModelConfig m;
    const json* hidden = find(node, "hidden");
    if (!hidden) throw ConfigError("model.hidden: missing required key");
    if (!hidden->is_array()) throw ConfigError("model.hidden: expected an array of integers");
    for (const auto& w : *hidden) {
        if (!w.is_number_integer() && !w.is_number_unsigned()) {
            throw ConfigError("model.hidden: expected an array of integers");
        }
        long long width = w.get<long long>();
        if (width < 1) throw ConfigError("model.hidden: widths must be >= 1");
        m.hidden.push_back(static_cast<int>(width));
    }
    long long depth = static_cast<long long>(m.hidden.size()) + 1;
    long long fl = get_int(node, "model", "feature_layers", 1);
    if (fl < 0 || fl > depth) {
        throw ConfigError("model.feature_layers: must be in [0, " + std::to_string(depth) +
                          "] for this depth");
    }
    m.feature_layers = static_cast<int>(fl);
    return m;
}

DatasetConfig parse_dataset(const json& node) {
    require_object(node, "dataset");
    DatasetConfig d;
    std::string type = get_string(node, "dataset", "type");
    if (type == "synthetic") {
        d.source = DatasetConfig::Source::kSynthetic;
        check_keys(node, "dataset",
                   {"type", "num_clusters", "samples_per_class", "dim", "num_classes",
                    "blob_std", "separation", "seed"});
        SyntheticConfig& s = d.synthetic;
        s.num_clusters = static_cast<int>(get_int(node, "dataset", "num_clusters", s.num_clusters));
        s.samples_per_class =
            static_cast<int>(get_int(node, "dataset", "samples_per_class", s.samples_per_class));
        s.dim = static_cast<int>(get_int(node, "dataset", "dim", s.dim));
        s.num_classes = static_cast<int>(get_int(node, "dataset", "num_classes", s.num_classes));
        s.blob_std = get_double(node, "dataset", "blob_std", s.blob_std);
        s.separation = get_double(node, "dataset", "separation", s.separation);
        s.seed = get_seed(node, "dataset", "seed", s.seed);
        require_positive(s.num_clusters, "dataset.num_clusters");
        require_positive(s.samples_per_class, "dataset.samples_per_class");
        require_positive(s.dim, "dataset.dim");
        require_positive(s.num_classes, "dataset.num_classes");
        if (s.num_classes % s.num_clusters != 0) {
            throw ConfigError("dataset.num_classes: must be divisible by num_clusters");
        }
        if (s.blob_std <= 0.0) throw ConfigError("dataset.blob_std: must be > 0");
        if (s.separation <= 0.0) throw ConfigError("dataset.separation: must be > 0");
    } else if (type == "idx") {
        d.source = DatasetConfig::Source::kIdx;
        check_keys(node, "dataset", {"type", "images", "labels", "subset", "subset_seed"});
        d.images_path = get_string(node, "dataset", "images");
        d.labels_path = get_string(node, "dataset", "labels");
        if (!std::filesystem::exists(d.images_path)) {
            throw ConfigError("dataset.images: file not found: " + d.images_path);
        }
        if (!std::filesystem::exists(d.labels_path)) {
            throw ConfigError("dataset.labels: file not found: " + d.labels_path);
        }
        long long subset = get_int(node, "dataset", "subset", 0);
        if (subset < 0) throw ConfigError("dataset.subset: must be >= 0");
        d.subset = static_cast<int>(subset);
        d.subset_seed = get_seed(node, "dataset", "subset_seed", 0);
    } else {
        throw ConfigError("dataset.type: expected \"synthetic\" or \"idx\"");
    }
    return d;
}

PartitionConfig parse_partition(const json& node) {
    require_object(node, "partition");
    check_keys(node, "partition",
               {"num_clients", "labels_per_client", "lognormal_sigma", "train_test_ratio",
                "seed"});
    PartitionConfig p;
    p.num_clients = static_cast<int>(get_int(node, "partition", "num_clients", p.num_clients));
    p.labels_per_client =
        static_cast<int>(get_int(node, "partition", "labels_per_client", p.labels_per_client));
    p.lognormal_sigma = get_double(node, "partition", "lognormal_sigma", p.lognormal_sigma);
    p.train_test_ratio = get_double(node, "partition", "train_test_ratio", p.train_test_ratio);
    p.seed = get_seed(node, "partition", "seed", p.seed);
    if (p.num_clients < 2) throw ConfigError("partition.num_clients: must be >= 2");
    require_positive(p.labels_per_client, "partition.labels_per_client");
    if (p.lognormal_sigma <= 0.0) throw ConfigError("partition.lognormal_sigma: must be > 0");
    if (p.train_test_ratio <= 0.0 || p.train_test_ratio >= 1.0) {
        throw ConfigError("partition.train_test_ratio: must be in (0, 1)");
    }
    return p;
}

MethodConfig parse_training(const json& node, Method method, int depth) {
    require_object(node, "training");
    check_keys(node, "training",
               {"rounds", "local_steps", "batch_size", "eta", "threads", "seed", "alpha_t",
                "lambda", "sigma", "mu", "r", "install_personalized_layers"});
    MethodConfig t;
    t.method = method;
    t.rounds = static_cast<int>(get_int(node, "training", "rounds", t.rounds));
    t.local_steps = static_cast<int>(get_int(node, "training", "local_steps", t.local_steps));
    t.batch_size = static_cast<int>(get_int(node, "training", "batch_size", t.batch_size));
    t.eta = get_double(node, "training", "eta", t.eta);
    t.threads = static_cast<int>(get_int(node, "training", "threads", t.threads));
    t.seed = get_seed(node, "training", "seed", t.seed);
    t.sim.alpha_t = get_double(node, "training", "alpha_t", t.sim.alpha_t);
    t.sim.lambda = get_double(node, "training", "lambda", t.sim.lambda);
    t.sim.sigma = get_double(node, "training", "sigma", t.sim.sigma);
    t.sim.mu = get_double(node, "training", "mu", t.sim.mu);
    const json* r = find(node, "r");
    if (r) {
        long long rv = get_int(node, "training", "r", 0);
        if (rv < 0 || rv > depth) {
            throw ConfigError("training.r: must be in [0, " + std::to_string(depth) +
                              "] for this model");
        }
        t.threshold_r = static_cast<int>(rv);
    }
    const json* install = find(node, "install_personalized_layers");
    if (install) {
        if (!install->is_boolean()) {
            throw ConfigError("training.install_personalized_layers: expected a boolean");
        }
        t.install_personalized_layers = install->get<bool>();
    }
    require_positive(t.rounds, "training.rounds");
    require_positive(t.local_steps, "training.local_steps");
    require_positive(t.batch_size, "training.batch_size");
    require_positive(t.threads, "training.threads");
    if (t.eta <= 0.0) throw ConfigError("training.eta: must be > 0");
    if (t.sim.alpha_t <= 0.0) throw ConfigError("training.alpha_t: must be > 0");
    if (t.sim.lambda < 0.0) throw ConfigError("training.lambda: must be >= 0");
    if (t.sim.sigma <= 0.0) throw ConfigError("training.sigma: must be > 0");
    if (t.sim.mu < 0.0) throw ConfigError("training.mu: must be >= 0");
    return t;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& path) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    require_object(root, path);
    check_keys(root, "", {"method", "model", "dataset", "partition", "training", "out_dir"});

    std::string method_str = get_string(root, "", "method");
    auto method = parse_method(method_str);
    if (!method) {
        throw ConfigError("method: unknown method \"" + method_str +
                          "\" (expected fedavg, fedprox, fedamp, or pfedcfr)");
    }

    ExperimentConfig cfg;
    const json* model = find(root, "model");
    if (!model) throw ConfigError("model: missing required key");
    cfg.model = parse_model(*model);

    const json* dataset = find(root, "dataset");
    if (!dataset) throw ConfigError("dataset: missing required key");
    cfg.dataset = parse_dataset(*dataset);

    const json* partition = find(root, "partition");
    if (!partition) throw ConfigError("partition: missing required key");
    cfg.partition = parse_partition(*partition);

    const json* training = find(root, "training");
    if (!training) throw ConfigError("training: missing required key");
    int depth = static_cast<int>(cfg.model.hidden.size()) + 1;
    cfg.training = parse_training(*training, *method, depth);

    if (const json* out = find(root, "out_dir")) {
        if (!out->is_string()) throw ConfigError("out_dir: expected a string");
        cfg.out_dir = out->get<std::string>();
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_experiment_config(buf.str(), path);
}

ModelSpec build_model_spec(const ModelConfig& m, int input_dim, int num_classes) {
    std::vector<int> dims;
    dims.push_back(input_dim);
    dims.insert(dims.end(), m.hidden.begin(), m.hidden.end());
    dims.push_back(num_classes);
    std::vector<LayerSpec> layers;
    int depth = static_cast<int>(dims.size()) - 1;
    for (int l = 0; l < depth; ++l) {
        LayerSpec ls;
        ls.fan_in = dims[static_cast<std::size_t>(l)];
        ls.fan_out = dims[static_cast<std::size_t>(l) + 1];
        ls.activation = (l == depth - 1) ? Activation::kIdentity : Activation::kRelu;
        ls.role = (l < m.feature_layers) ? LayerRole::kFeature : LayerRole::kDecision;
        layers.push_back(ls);
    }
    return ModelSpec(std::move(layers));
}

Dataset load_dataset(const DatasetConfig& d) {
    Dataset ds;
    if (d.source == DatasetConfig::Source::kSynthetic) {
        ds = gen_synthetic(d.synthetic);
    } else {
        ds = load_idx(d.images_path, d.labels_path);
    }
    if (d.subset > 0 && d.subset < ds.size()) {
        ds = take_subset(ds, d.subset, d.subset_seed);
    }
    return ds;
}

void apply_seed_override(ExperimentConfig& cfg, std::uint64_t seed) {
    cfg.dataset.synthetic.seed = seed;
    cfg.dataset.subset_seed = seed;
    cfg.partition.seed = seed;
    cfg.training.seed = seed;
}

}  // namespace pfedcfr
