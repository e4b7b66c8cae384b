// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pfedcfr/data.hpp"
#include "pfedcfr/fusion.hpp"
#include "pfedcfr/nn.hpp"

namespace pfedcfr {

enum class Method { kFedAvg, kFedProx, kFedAmp, kPFedCfr };

std::string method_name(Method m);
std::optional<Method> parse_method(const std::string& name);

struct MethodConfig {
    Method method = Method::kPFedCfr;
    SimilarityParams sim;
    std::optional<int> threshold_r;  // pfedcfr only; default = feature layer count
    int local_steps = 10;            // local epochs per round
    int batch_size = 32;
    double eta = 0.005;
    int rounds = 100;
    std::uint64_t seed = 0;
    int threads = 1;  // parallel client training; results do not depend on it
    // Test hook: scales the data term of the local loss (0 isolates penalties).
    double data_loss_weight = 1.0;
    // Alternative install rule: also overwrite personalized layers with their
    // fused result instead of keeping each client's trained values.
    bool install_personalized_layers = false;
};

struct ClientState {
    int client_id = 0;
    ClientShard shard;
    ModelParams params;
    std::optional<ModelParams> personalized_target;  // fused nu_n, layers 1..r
    std::map<int, LayerVec> global_layers;           // fused shared layers, r+1..L
};

// Per-layer proximal pull. strength is the gradient coefficient: the layer
// contributes strength/2 * ||nu_l - target_l||^2 to the loss and
// strength * (nu_l - target_l) to the gradient. Personalized layers pull
// toward the client's fused target with strength lambda/alpha_t, generic
// layers toward the shared layer with strength mu.
struct PenaltySpec {
    enum class Target { kNone, kPersonalized, kGlobal };
    struct LayerPenalty {
        Target target = Target::kNone;
        double strength = 0.0;
    };
    std::vector<LayerPenalty> layers;  // one per model layer
};

struct RoundMetrics {
    int round = 0;
    std::vector<double> train_loss;
    std::vector<double> test_loss;
    std::vector<double> test_acc;
    double train_loss_mean = 0.0;
    double test_loss_mean = 0.0;
    double acc_mean = 0.0;
    double acc_std = 0.0;  // population std across clients
    double wall_ms = 0.0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Builds the per-layer penalty assignment for a method: fedavg none,
// fedprox all-global with mu, fedamp all-personalized with lambda/alpha_t,
// pfedcfr split by the plan's tags.
PenaltySpec make_penalty_spec(const ModelSpec& spec, const MethodConfig& cfg,
                              const FusionPlan& plan);

// Quadratic pull toward the round's targets; errors if a referenced target
// is missing.
std::pair<double, Gradient> penalty_value_and_grad(const ModelParams& params,
                                                   const ClientState& state,
                                                   const PenaltySpec& spec,
                                                   const ModelSpec& model_spec);

// local_steps epochs of mini-batch SGD on data loss + penalty. The shuffle
// seed derives from (cfg.seed, round, epoch) only, so identically configured
// clients stay identical. Returns the trained parameters.
ModelParams local_train(const ModelSpec& model_spec, const ClientState& state,
                        const MethodConfig& cfg, const FusionPlan& plan, int round);

// Mean cross-entropy and argmax accuracy; argmax ties break toward the
// lowest class index.
EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const Dataset& test);

// One full round: local training, upload, fusion, target/parameter install,
// evaluation. Fused generic layers are installed into client params (they
// are genuinely shared); fused personalized layers become penalty targets
// and the client keeps its trained values unless
// cfg.install_personalized_layers is set.
RoundMetrics run_round(const ModelSpec& model_spec, std::vector<ClientState>& clients,
                       const FusionPlan& plan, const MethodConfig& cfg, int t,
                       WeightMatrix* weights_out = nullptr);

// Builds the plan for a method (fedavg/fedprox: all generic; fedamp: single
// concatenated block; pfedcfr: threshold rule).
FusionPlan plan_for_method(const ModelSpec& spec, const MethodConfig& cfg);

// T rounds from a shared Glorot init; deterministic in cfg.seed.
std::vector<RoundMetrics> run_experiment(const ModelSpec& model_spec,
                                         const std::vector<ClientShard>& shards,
                                         const MethodConfig& cfg,
                                         std::vector<WeightMatrix>* weight_log = nullptr);

}  // namespace pfedcfr
