// SPDX-License-Identifier: Apache-2.0

#include "pfedcfr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "pfedcfr/rng.hpp"

namespace pfedcfr {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;
constexpr double kPixelMean = 0.1307;
constexpr double kPixelStd = 0.3081;

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path, long offset) {
    unsigned char buf[4];
    if (!f.read(reinterpret_cast<char*>(buf), 4)) {
        throw DataFormatError(path, offset, "truncated file: expected 4 more bytes");
    }
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataFormatError(images_path, 0, "cannot open file");
    std::uint32_t magic = read_u32_be(img, images_path, 0);
    if (magic != kImagesMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "magic mismatch: got 0x%08x, want 0x%08x", magic,
                      kImagesMagic);
        throw DataFormatError(images_path, 0, buf);
    }
    std::uint32_t count = read_u32_be(img, images_path, 4);
    std::uint32_t rows = read_u32_be(img, images_path, 8);
    std::uint32_t cols = read_u32_be(img, images_path, 12);
    std::size_t pixels = static_cast<std::size_t>(count) * rows * cols;
    std::vector<unsigned char> raw(pixels);
    if (!img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels))) {
        throw DataFormatError(images_path, 16, "truncated file: expected " +
                                                   std::to_string(pixels) + " pixel bytes");
    }

    std::ifstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw DataFormatError(labels_path, 0, "cannot open file");
    magic = read_u32_be(lbl, labels_path, 0);
    if (magic != kLabelsMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "magic mismatch: got 0x%08x, want 0x%08x", magic,
                      kLabelsMagic);
        throw DataFormatError(labels_path, 0, buf);
    }
    std::uint32_t label_count = read_u32_be(lbl, labels_path, 4);
    if (label_count != count) {
        throw DataFormatError(labels_path, 4,
                              "label count " + std::to_string(label_count) +
                                  " does not match image count " + std::to_string(count));
    }
    std::vector<unsigned char> raw_labels(label_count);
    if (!lbl.read(reinterpret_cast<char*>(raw_labels.data()),
                  static_cast<std::streamsize>(label_count))) {
        throw DataFormatError(labels_path, 8, "truncated file: expected " +
                                                  std::to_string(label_count) + " label bytes");
    }

    Dataset ds;
    int d = static_cast<int>(rows * cols);
    ds.inputs = Matrix(static_cast<int>(count), d);
    for (std::size_t i = 0; i < pixels; ++i) {
        ds.inputs.data[i] = (raw[i] / 255.0 - kPixelMean) / kPixelStd;
    }
    ds.labels.resize(label_count);
    int max_label = 0;
    for (std::uint32_t i = 0; i < label_count; ++i) {
        ds.labels[i] = raw_labels[i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

Dataset gen_synthetic(const SyntheticConfig& cfg) {
    if (cfg.num_clusters < 1 || cfg.num_classes < 1 || cfg.num_classes % cfg.num_clusters != 0) {
        throw ConfigError("num_classes must be divisible by num_clusters");
    }
    Rng rng(derive_seed(cfg.seed, seed_tag::kSynthetic));

    auto random_direction = [&](double radius) {
        std::vector<double> v(static_cast<std::size_t>(cfg.dim));
        double norm_sq = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm_sq += x * x;
        }
        double scale = radius / std::sqrt(norm_sq);
        for (auto& x : v) x *= scale;
        return v;
    };

    // Cluster centers sit far apart; class means orbit their cluster center
    // at the separation radius.
    std::vector<std::vector<double>> centers;
    for (int k = 0; k < cfg.num_clusters; ++k) {
        centers.push_back(random_direction(3.0 * cfg.separation));
    }
    int classes_per_cluster = cfg.num_classes / cfg.num_clusters;
    std::vector<std::vector<double>> means;
    for (int c = 0; c < cfg.num_classes; ++c) {
        int cluster = c / classes_per_cluster;
        std::vector<double> mean = random_direction(cfg.separation);
        for (int i = 0; i < cfg.dim; ++i) mean[static_cast<std::size_t>(i)] += centers[static_cast<std::size_t>(cluster)][static_cast<std::size_t>(i)];
        means.push_back(std::move(mean));
    }

    Dataset ds;
    ds.num_classes = cfg.num_classes;
    ds.inputs = Matrix(cfg.num_classes * cfg.samples_per_class, cfg.dim);
    ds.labels.resize(static_cast<std::size_t>(ds.inputs.rows));
    int row = 0;
    for (int c = 0; c < cfg.num_classes; ++c) {
        for (int s = 0; s < cfg.samples_per_class; ++s) {
            double* x = ds.inputs.row(row);
            for (int i = 0; i < cfg.dim; ++i) {
                x[i] = means[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] +
                       cfg.blob_std * rng.normal();
            }
            ds.labels[static_cast<std::size_t>(row)] = c;
            ++row;
        }
    }
    return ds;
}

namespace {

Dataset gather(const Dataset& src, const std::vector<int>& idx) {
    Dataset out;
    out.num_classes = src.num_classes;
    out.inputs = Matrix(static_cast<int>(idx.size()), src.dim());
    out.labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* from = src.inputs.row(idx[i]);
        std::copy(from, from + src.dim(), out.inputs.row(static_cast<int>(i)));
        out.labels[i] = src.labels[static_cast<std::size_t>(idx[i])];
    }
    return out;
}

// Largest-remainder allocation of `total` items proportional to `weights`,
// with every slot getting at least one item.
std::vector<int> allocate_counts(const std::vector<double>& weights, int total) {
    const int n = static_cast<int>(weights.size());
    double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    std::vector<std::pair<double, int>> remainders;
    int assigned = 0;
    for (int i = 0; i < n; ++i) {
        double share = weights[static_cast<std::size_t>(i)] / wsum * total;
        counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(share));
        assigned += counts[static_cast<std::size_t>(i)];
        remainders.emplace_back(share - std::floor(share), i);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (int i = 0; assigned < total; ++i, ++assigned) {
        counts[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i % n)].second)] += 1;
    }
    // No holder may come away empty; take from the largest.
    for (int i = 0; i < n; ++i) {
        while (counts[static_cast<std::size_t>(i)] == 0) {
            int big = static_cast<int>(std::max_element(counts.begin(), counts.end()) -
                                       counts.begin());
            if (counts[static_cast<std::size_t>(big)] <= 1) {
                throw PartitionError("cannot give every holder a sample");
            }
            counts[static_cast<std::size_t>(big)] -= 1;
            counts[static_cast<std::size_t>(i)] += 1;
        }
    }
    return counts;
}

}  // namespace

std::vector<ClientShard> partition_heterogeneous(const Dataset& ds, const PartitionConfig& cfg) {
    const int n_clients = cfg.num_clients;
    const int s = cfg.labels_per_client;
    const int c = ds.num_classes;
    if (n_clients < 2) throw ConfigError("num_clients must be >= 2");
    if (s < 1 || s > c) throw ConfigError("labels_per_client must be in [1, num_classes]");
    if (cfg.lognormal_sigma <= 0.0) throw ConfigError("lognormal_sigma must be > 0");
    if (cfg.train_test_ratio <= 0.0 || cfg.train_test_ratio >= 1.0) {
        throw ConfigError("train_test_ratio must be in (0,1)");
    }

    Rng rng(derive_seed(cfg.seed, seed_tag::kPartition));

    // Round-robin class assignment over a shuffled class list: client n gets
    // classes order[(n*s + j) mod C], so each class is held by
    // floor(N*s/C) or ceil(N*s/C) clients.
    std::vector<int> order(static_cast<std::size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::vector<std::vector<int>> client_classes(static_cast<std::size_t>(n_clients));
    std::vector<std::vector<int>> class_holders(static_cast<std::size_t>(c));
    for (int n = 0; n < n_clients; ++n) {
        for (int j = 0; j < s; ++j) {
            int cls = order[static_cast<std::size_t>((n * s + j) % c)];
            client_classes[static_cast<std::size_t>(n)].push_back(cls);
            class_holders[static_cast<std::size_t>(cls)].push_back(n);
        }
    }

    // Pool of sample indices per class, shuffled once.
    std::vector<std::vector<int>> class_indices(static_cast<std::size_t>(c));
    for (int i = 0; i < ds.size(); ++i) {
        class_indices[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    for (auto& v : class_indices) rng.shuffle(v);

    // Split every class among its holders: lognormal draw times random
    // factor, exact largest-remainder rescale.
    std::vector<std::vector<int>> client_samples(static_cast<std::size_t>(n_clients));
    for (int cls = 0; cls < c; ++cls) {
        const auto& holders = class_holders[static_cast<std::size_t>(cls)];
        if (holders.empty()) continue;
        const auto& pool = class_indices[static_cast<std::size_t>(cls)];
        if (pool.size() < holders.size()) {
            throw PartitionError("class " + std::to_string(cls) + " has " +
                                 std::to_string(pool.size()) + " samples for " +
                                 std::to_string(holders.size()) + " holders");
        }
        std::vector<double> weights;
        weights.reserve(holders.size());
        for (std::size_t h = 0; h < holders.size(); ++h) {
            double w = rng.lognormal(0.0, cfg.lognormal_sigma);
            if (!cfg.disable_random_factor) w *= rng.uniform(0.5, 1.5);
            weights.push_back(w);
        }
        std::vector<int> counts = allocate_counts(weights, static_cast<int>(pool.size()));
        std::size_t cursor = 0;
        for (std::size_t h = 0; h < holders.size(); ++h) {
            auto& dst = client_samples[static_cast<std::size_t>(holders[h])];
            dst.insert(dst.end(), pool.begin() + static_cast<std::ptrdiff_t>(cursor),
                       pool.begin() + static_cast<std::ptrdiff_t>(cursor + counts[h]));
            cursor += static_cast<std::size_t>(counts[h]);
        }
    }

    // Stratified train/test split per client.
    std::vector<ClientShard> shards;
    shards.reserve(static_cast<std::size_t>(n_clients));
    for (int n = 0; n < n_clients; ++n) {
        std::vector<int> train_idx, test_idx;
        auto classes = client_classes[static_cast<std::size_t>(n)];
        std::sort(classes.begin(), classes.end());
        for (int cls : classes) {
            std::vector<int> mine;
            for (int idx : client_samples[static_cast<std::size_t>(n)]) {
                if (ds.labels[static_cast<std::size_t>(idx)] == cls) mine.push_back(idx);
            }
            int k = static_cast<int>(mine.size());
            if (k == 0) continue;
            // At least one train sample always; at least one test sample
            // whenever the class has two or more.
            int n_train = static_cast<int>(std::lround(k * cfg.train_test_ratio));
            n_train = std::clamp(n_train, 1, k >= 2 ? k - 1 : k);
            train_idx.insert(train_idx.end(), mine.begin(), mine.begin() + n_train);
            test_idx.insert(test_idx.end(), mine.begin() + n_train, mine.end());
        }
        ClientShard shard;
        shard.client_id = n;
        shard.label_set = classes;
        shard.train = gather(ds, train_idx);
        shard.test = gather(ds, test_idx);
        shards.push_back(std::move(shard));
    }
    return shards;
}

Dataset take_subset(const Dataset& ds, int count, std::uint64_t seed) {
    if (count >= ds.size()) return ds;
    Rng rng(derive_seed(seed, seed_tag::kSubset));
    std::vector<int> idx(static_cast<std::size_t>(ds.size()));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    idx.resize(static_cast<std::size_t>(count));
    std::sort(idx.begin(), idx.end());
    return gather(ds, idx);
}

}  // namespace pfedcfr
