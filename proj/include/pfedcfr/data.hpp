// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfedcfr/nn.hpp"

namespace pfedcfr {

struct Dataset {
    Matrix inputs;            // M x d
    std::vector<int> labels;  // class indices in [0, num_classes)
    int num_classes = 0;

    int size() const { return inputs.rows; }
    int dim() const { return inputs.cols; }
};

struct ClientShard {
    int client_id = 0;
    Dataset train;
    Dataset test;
    std::vector<int> label_set;  // sorted classes present on this client
};

struct PartitionConfig {
    int num_clients = 2;
    int labels_per_client = 2;
    double lognormal_sigma = 1.0;
    std::uint64_t seed = 0;
    double train_test_ratio = 0.75;  // fraction of each shard that becomes train
    // Test hook: drop the Uniform[0.5,1.5) factor so the sigma->0 limit is
    // exactly checkable.
    bool disable_random_factor = false;
};

struct SyntheticConfig {
    int num_clusters = 2;
    int samples_per_class = 50;
    int dim = 10;
    int num_classes = 4;
    std::uint64_t seed = 0;
    double blob_std = 0.5;
    double separation = 3.0;
};

// Reads an IDX image/label file pair into a flattened, standardized dataset:
// pixels are scaled to [0,1] and normalized with mean 0.1307, std 0.3081.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Gaussian class blobs; classes in the same cluster share a mean region, so
// clients holding classes from one cluster end up with similar models.
Dataset gen_synthetic(const SyntheticConfig& cfg);

// Label-skewed, size-skewed split: each client gets exactly
// labels_per_client classes (round-robin over a shuffled class list), class
// samples are divided among holders by Lognormal(0, sigma^2) draws times a
// Uniform[0.5,1.5) factor, and each shard is split train/test stratified by
// class. The union of all shards is exactly the input dataset.
std::vector<ClientShard> partition_heterogeneous(const Dataset& ds, const PartitionConfig& cfg);

// Seeded random subset without replacement (keeps num_classes).
Dataset take_subset(const Dataset& ds, int count, std::uint64_t seed);

}  // namespace pfedcfr
