// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <vector>

#include "pfedcfr/nn.hpp"

namespace pfedcfr {

enum class FusionStrategy { kPersonalized, kGeneric };

// Per-layer strategy assignment: layers 1..r are personalized, r+1..L
// generic. Layer indices are 1-based everywhere user-facing.
struct FusionPlan {
    int depth = 0;
    int threshold_r = 0;
    std::vector<FusionStrategy> tags;  // tags[l-1] for layer l

    bool personalized(int layer_1based) const {
        return tags[static_cast<std::size_t>(layer_1based - 1)] == FusionStrategy::kPersonalized;
    }
};

struct SimilarityParams {
    double alpha_t = 1e4;  // convergence coefficient
    double sigma = 1e6;    // similarity bandwidth of A(x) = 1 - exp(-x/sigma)
    double lambda = 1.0;   // personalized penalty coefficient
    double mu = 0.001;     // generic penalty coefficient
};

// Per-layer N x N collaboration weights; row n holds client n's mixing
// weights. Generic layers carry uniform 1/N rows.
struct WeightMatrix {
    int num_clients = 0;
    std::vector<Matrix> per_layer;
};

// The ordered model snapshots uploaded by the N clients this round.
using RoundUploads = std::vector<ModelParams>;

struct LayerFusion {
    std::vector<LayerVec> fused;  // one per client
    Matrix weights;               // N x N
};

struct FusionResult {
    std::vector<ModelParams> per_client;
    std::map<int, LayerVec> global_layers;  // 1-based layer -> shared vector
    WeightMatrix weights;
};

// Builds the plan from the threshold r; when r is absent it defaults to the
// number of feature-role layers, so feature extraction is personalized and
// decision layers are shared.
FusionPlan make_plan(const ModelSpec& spec, std::optional<int> r = std::nullopt);

// Plan over a single concatenated block, used for whole-model fusion.
FusionPlan make_single_block_plan();

// zeta = alpha_t * (1/sigma) * exp(-dist_sq/sigma): the cross-client
// influence weight as a function of squared layer distance.
double similarity_weight(double dist_sq, const SimilarityParams& p);

// Similarity-weighted convex recombination of one layer across clients.
// Off-diagonal weights come from similarity_weight on pairwise distances;
// each diagonal absorbs the remainder so rows sum to 1. A non-positive
// diagonal raises NonContractiveWeightsError rather than clamping.
LayerFusion personalized_fuse_layer(const std::vector<LayerVec>& layer_snapshots,
                                    const SimilarityParams& p);

// Coordinate-wise arithmetic mean shared by all clients.
LayerVec generic_fuse_layer(const std::vector<LayerVec>& layer_snapshots);

// One server round: personalized layers fused per client, generic layers
// fused once and placed identically into every client's recombined model.
FusionResult fuse_round(const RoundUploads& uploads, const FusionPlan& plan,
                        const SimilarityParams& p);

// Whole-model <-> single-block views (for whole-model distance semantics).
LayerVec concat_model(const ModelParams& params);
ModelParams split_model(const ModelSpec& spec, const LayerVec& flat);

}  // namespace pfedcfr
