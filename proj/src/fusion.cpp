// SPDX-License-Identifier: Apache-2.0

#include "pfedcfr/fusion.hpp"

#include <cmath>
#include <string>

namespace pfedcfr {

FusionPlan make_plan(const ModelSpec& spec, std::optional<int> r) {
    int depth = spec.depth();
    int threshold = r.value_or(spec.num_feature_layers());
    if (threshold < 0 || threshold > depth) {
        throw ConfigError("fusion threshold r=" + std::to_string(threshold) +
                          " out of range [0, " + std::to_string(depth) + "]");
    }
    FusionPlan plan;
    plan.depth = depth;
    plan.threshold_r = threshold;
    plan.tags.resize(static_cast<std::size_t>(depth));
    for (int l = 1; l <= depth; ++l) {
        plan.tags[static_cast<std::size_t>(l - 1)] =
            l <= threshold ? FusionStrategy::kPersonalized : FusionStrategy::kGeneric;
    }
    return plan;
}

FusionPlan make_single_block_plan() {
    FusionPlan plan;
    plan.depth = 1;
    plan.threshold_r = 1;
    plan.tags = {FusionStrategy::kPersonalized};
    return plan;
}

double similarity_weight(double dist_sq, const SimilarityParams& p) {
    return p.alpha_t * (1.0 / p.sigma) * std::exp(-dist_sq / p.sigma);
}

LayerFusion personalized_fuse_layer(const std::vector<LayerVec>& layer_snapshots,
                                    const SimilarityParams& p) {
    const int n = static_cast<int>(layer_snapshots.size());
    if (n < 2) throw ShapeError("personalized fusion needs at least 2 clients");
    const std::size_t len = layer_snapshots[0].size();
    for (int m = 1; m < n; ++m) {
        if (layer_snapshots[static_cast<std::size_t>(m)].size() != len) {
            throw ShapeError("snapshot " + std::to_string(m) + " has length " +
                             std::to_string(layer_snapshots[static_cast<std::size_t>(m)].size()) +
                             ", expected " + std::to_string(len));
        }
    }

    // Pairwise squared distances are symmetric; compute each pair once so
    // zeta(n,m) and zeta(m,n) are bit-identical.
    Matrix dist_sq(n, n);
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            double d = layer_distance_sq(layer_snapshots[static_cast<std::size_t>(a)],
                                         layer_snapshots[static_cast<std::size_t>(b)]);
            dist_sq.at(a, b) = d;
            dist_sq.at(b, a) = d;
        }
    }

    LayerFusion out;
    out.weights = Matrix(n, n);
    for (int a = 0; a < n; ++a) {
        double offdiag_sum = 0.0;
        for (int b = 0; b < n; ++b) {
            if (b == a) continue;
            double zeta = similarity_weight(dist_sq.at(a, b), p);
            out.weights.at(a, b) = zeta;
            offdiag_sum += zeta;
        }
        double self = 1.0 - offdiag_sum;
        if (self <= 0.0) throw NonContractiveWeightsError(a, offdiag_sum);
        out.weights.at(a, a) = self;
    }

    out.fused.assign(static_cast<std::size_t>(n), LayerVec(len, 0.0));
    for (int a = 0; a < n; ++a) {
        LayerVec& dst = out.fused[static_cast<std::size_t>(a)];
        for (int b = 0; b < n; ++b) {
            double w = out.weights.at(a, b);
            const LayerVec& src = layer_snapshots[static_cast<std::size_t>(b)];
            for (std::size_t i = 0; i < len; ++i) dst[i] += w * src[i];
        }
    }
    return out;
}

LayerVec generic_fuse_layer(const std::vector<LayerVec>& layer_snapshots) {
    const int n = static_cast<int>(layer_snapshots.size());
    if (n < 1) throw ShapeError("generic fusion needs at least 1 client");
    const std::size_t len = layer_snapshots[0].size();
    for (int m = 1; m < n; ++m) {
        if (layer_snapshots[static_cast<std::size_t>(m)].size() != len) {
            throw ShapeError("snapshot " + std::to_string(m) + " has length " +
                             std::to_string(layer_snapshots[static_cast<std::size_t>(m)].size()) +
                             ", expected " + std::to_string(len));
        }
    }
    LayerVec mean(len, 0.0);
    for (const auto& snap : layer_snapshots) {
        for (std::size_t i = 0; i < len; ++i) mean[i] += snap[i];
    }
    for (auto& v : mean) v /= n;
    return mean;
}

FusionResult fuse_round(const RoundUploads& uploads, const FusionPlan& plan,
                        const SimilarityParams& p) {
    const int n = static_cast<int>(uploads.size());
    if (n < 2) throw ShapeError("fuse_round needs at least 2 uploads");
    for (int m = 0; m < n; ++m) {
        if (static_cast<int>(uploads[static_cast<std::size_t>(m)].layers.size()) != plan.depth) {
            throw ShapeError("upload " + std::to_string(m) + " has " +
                             std::to_string(uploads[static_cast<std::size_t>(m)].layers.size()) +
                             " layers, plan expects " + std::to_string(plan.depth));
        }
    }

    FusionResult result;
    result.per_client.assign(static_cast<std::size_t>(n), ModelParams{});
    for (auto& mp : result.per_client) {
        mp.layers.resize(static_cast<std::size_t>(plan.depth));
    }
    result.weights.num_clients = n;
    result.weights.per_layer.resize(static_cast<std::size_t>(plan.depth));

    for (int l = 1; l <= plan.depth; ++l) {
        std::vector<LayerVec> snapshots;
        snapshots.reserve(static_cast<std::size_t>(n));
        for (const auto& up : uploads) {
            snapshots.push_back(up.layers[static_cast<std::size_t>(l - 1)]);
        }
        if (plan.personalized(l)) {
            LayerFusion lf;
            try {
                lf = personalized_fuse_layer(snapshots, p);
            } catch (const NonContractiveWeightsError& e) {
                throw NonContractiveWeightsError(e.client(), e.offdiag_sum(), l);
            } catch (const ShapeError& e) {
                throw ShapeError(l, e.what());
            }
            for (int a = 0; a < n; ++a) {
                result.per_client[static_cast<std::size_t>(a)].layers[static_cast<std::size_t>(l - 1)] =
                    std::move(lf.fused[static_cast<std::size_t>(a)]);
            }
            result.weights.per_layer[static_cast<std::size_t>(l - 1)] = std::move(lf.weights);
        } else {
            LayerVec shared;
            try {
                shared = generic_fuse_layer(snapshots);
            } catch (const ShapeError& e) {
                throw ShapeError(l, e.what());
            }
            // The same vector goes into every client, bit-identical.
            for (int a = 0; a < n; ++a) {
                result.per_client[static_cast<std::size_t>(a)].layers[static_cast<std::size_t>(l - 1)] = shared;
            }
            Matrix uniform(n, n);
            for (auto& v : uniform.data) v = 1.0 / n;
            result.weights.per_layer[static_cast<std::size_t>(l - 1)] = std::move(uniform);
            result.global_layers[l] = std::move(shared);
        }
    }
    return result;
}

LayerVec concat_model(const ModelParams& params) {
    std::size_t total = 0;
    for (const auto& l : params.layers) total += l.size();
    LayerVec flat;
    flat.reserve(total);
    for (const auto& l : params.layers) flat.insert(flat.end(), l.begin(), l.end());
    return flat;
}

ModelParams split_model(const ModelSpec& spec, const LayerVec& flat) {
    ModelParams params;
    std::size_t cursor = 0;
    for (const auto& l : spec.layers()) {
        std::size_t count = static_cast<std::size_t>(l.param_count());
        if (cursor + count > flat.size()) {
            throw ShapeError("flat vector too short: " + std::to_string(flat.size()));
        }
        params.layers.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   flat.begin() + static_cast<std::ptrdiff_t>(cursor + count));
        cursor += count;
    }
    if (cursor != flat.size()) {
        throw ShapeError("flat vector has " + std::to_string(flat.size()) + " entries, model needs " +
                         std::to_string(cursor));
    }
    return params;
}

}  // namespace pfedcfr
