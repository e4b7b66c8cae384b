// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfedcfr/data.hpp"
#include "pfedcfr/nn.hpp"
#include "pfedcfr/runtime.hpp"

namespace pfedcfr {

// Where the samples come from: generated blobs or an IDX image/label pair.
struct DatasetConfig {
    enum class Source { kSynthetic, kIdx };
    Source source = Source::kSynthetic;
    SyntheticConfig synthetic;
    std::string images_path;
    std::string labels_path;
    int subset = 0;  // 0 = use every sample
    std::uint64_t subset_seed = 0;
};

// Hidden widths plus how many leading layers count as feature extraction;
// input/output dims come from the dataset.
struct ModelConfig {
    std::vector<int> hidden;
    int feature_layers = 1;
};

struct ExperimentConfig {
    ModelConfig model;
    DatasetConfig dataset;
    PartitionConfig partition;
    MethodConfig training;
    std::string out_dir = "results";
};

// Parses and validates a JSON experiment file. Unknown keys, missing
// required keys, wrong types, out-of-range values, and missing referenced
// files all raise ConfigError naming the offending field.
ExperimentConfig load_experiment_config(const std::string& path);

// Same, from an in-memory JSON string (path only labels error messages).
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& path);

// Instantiates the layer stack: relu hidden layers, identity output, the
// first feature_layers tagged feature and the rest decision.
ModelSpec build_model_spec(const ModelConfig& m, int input_dim, int num_classes);

// Materializes the dataset (generation or IDX load, then optional subset).
Dataset load_dataset(const DatasetConfig& d);

// Points every seed in the config (dataset, partition, training) at one
// value, for whole-run reseeding from the command line.
void apply_seed_override(ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace pfedcfr
