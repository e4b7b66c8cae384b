// SPDX-License-Identifier: Apache-2.0

#include "pfedcfr/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>
#include <utility>

#include "pfedcfr/rng.hpp"

namespace pfedcfr {

std::string method_name(Method m) {
    switch (m) {
        case Method::kFedAvg: return "fedavg";
        case Method::kFedProx: return "fedprox";
        case Method::kFedAmp: return "fedamp";
        case Method::kPFedCfr: return "pfedcfr";
    }
    return "unknown";
}

std::optional<Method> parse_method(const std::string& name) {
    if (name == "fedavg") return Method::kFedAvg;
    if (name == "fedprox") return Method::kFedProx;
    if (name == "fedamp") return Method::kFedAmp;
    if (name == "pfedcfr") return Method::kPFedCfr;
    return std::nullopt;
}

FusionPlan plan_for_method(const ModelSpec& spec, const MethodConfig& cfg) {
    switch (cfg.method) {
        case Method::kFedAvg:
        case Method::kFedProx:
            return make_plan(spec, 0);
        case Method::kFedAmp:
            return make_single_block_plan();
        case Method::kPFedCfr:
            return make_plan(spec, cfg.threshold_r);
    }
    return make_plan(spec, 0);
}

PenaltySpec make_penalty_spec(const ModelSpec& spec, const MethodConfig& cfg,
                              const FusionPlan& plan) {
    PenaltySpec ps;
    ps.layers.resize(static_cast<std::size_t>(spec.depth()));
    switch (cfg.method) {
        case Method::kFedAvg:
            break;  // lambda and mu stay unused
        case Method::kFedProx:
            for (auto& lp : ps.layers) {
                lp.target = PenaltySpec::Target::kGlobal;
                lp.strength = cfg.sim.mu;
            }
            break;
        case Method::kFedAmp:
            // One concatenated block: per-layer quadratics with a shared
            // coefficient sum to the whole-model pull.
            for (auto& lp : ps.layers) {
                lp.target = PenaltySpec::Target::kPersonalized;
                lp.strength = cfg.sim.lambda / cfg.sim.alpha_t;
            }
            break;
        case Method::kPFedCfr:
            for (int l = 1; l <= spec.depth(); ++l) {
                auto& lp = ps.layers[static_cast<std::size_t>(l - 1)];
                if (plan.personalized(l)) {
                    lp.target = PenaltySpec::Target::kPersonalized;
                    lp.strength = cfg.sim.lambda / cfg.sim.alpha_t;
                } else {
                    lp.target = PenaltySpec::Target::kGlobal;
                    lp.strength = cfg.sim.mu;
                }
            }
            break;
    }
    return ps;
}

std::pair<double, Gradient> penalty_value_and_grad(const ModelParams& params,
                                                   const ClientState& state,
                                                   const PenaltySpec& spec,
                                                   const ModelSpec& model_spec) {
    double value = 0.0;
    Gradient grad = zero_gradient(model_spec);
    for (int l = 1; l <= model_spec.depth(); ++l) {
        const auto& lp = spec.layers[static_cast<std::size_t>(l - 1)];
        if (lp.target == PenaltySpec::Target::kNone) continue;

        const LayerVec* target = nullptr;
        if (lp.target == PenaltySpec::Target::kPersonalized) {
            if (!state.personalized_target) {
                throw ShapeError(l, "personalized penalty target missing");
            }
            target = &state.personalized_target->layers[static_cast<std::size_t>(l - 1)];
        } else {
            auto it = state.global_layers.find(l);
            if (it == state.global_layers.end()) {
                throw ShapeError(l, "global penalty target missing");
            }
            target = &it->second;
        }

        const LayerVec& v = params.layers[static_cast<std::size_t>(l - 1)];
        if (target->size() != v.size()) {
            throw ShapeError(l, "penalty target length " + std::to_string(target->size()) +
                                    " does not match params " + std::to_string(v.size()));
        }
        LayerVec& g = grad.layers[static_cast<std::size_t>(l - 1)];
        double acc = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            double d = v[i] - (*target)[i];
            acc += d * d;
            g[i] = lp.strength * d;
        }
        value += 0.5 * lp.strength * acc;
    }
    return {value, std::move(grad)};
}

namespace {

Batch gather_batch(const Dataset& ds, const std::vector<int>& order, std::size_t begin,
                   std::size_t end) {
    Batch b;
    b.inputs = Matrix(static_cast<int>(end - begin), ds.dim());
    b.labels.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const double* src = ds.inputs.row(order[i]);
        std::copy(src, src + ds.dim(), b.inputs.row(static_cast<int>(i - begin)));
        b.labels[i - begin] = ds.labels[static_cast<std::size_t>(order[i])];
    }
    return b;
}

bool penalty_active(const PenaltySpec& ps) {
    for (const auto& lp : ps.layers) {
        if (lp.target != PenaltySpec::Target::kNone) return true;
    }
    return false;
}

// Runs fn(0..n-1), striped over up to `threads` workers. The first thrown
// exception is rethrown on the caller's thread.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    int workers = std::min(threads, n);
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

ModelParams local_train(const ModelSpec& model_spec, const ClientState& state,
                        const MethodConfig& cfg, const FusionPlan& plan, int round) {
    if (state.shard.train.size() < 1) {
        throw ConfigError("client " + std::to_string(state.client_id) + " has an empty shard");
    }
    PenaltySpec pspec = make_penalty_spec(model_spec, cfg, plan);
    PenaltyFn fn;
    const PenaltyFn* fn_ptr = nullptr;
    if (penalty_active(pspec)) {
        fn = [&](const ModelParams& p) {
            auto [value, grad] = penalty_value_and_grad(p, state, pspec, model_spec);
            return PenaltyTerm{value, std::move(grad)};
        };
        fn_ptr = &fn;
    }

    ModelParams params = state.params;
    const Dataset& train = state.shard.train;
    std::vector<int> order(static_cast<std::size_t>(train.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.local_steps; ++epoch) {
        // Seeded by (seed, round, epoch) only: identically configured
        // clients see the same permutation pattern.
        Rng rng(derive_seed(cfg.seed, seed_tag::kShuffle, static_cast<std::uint64_t>(round),
                            static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            Batch batch = gather_batch(train, order, begin, end);
            LossGrad lg;
            try {
                lg = loss_and_grad(model_spec, params, batch, fn_ptr, cfg.data_loss_weight);
            } catch (const NonFiniteLossError& e) {
                throw NonFiniteLossError("client " + std::to_string(state.client_id) + ", round " +
                                         std::to_string(round) + ", epoch " +
                                         std::to_string(epoch + 1) + ": " + e.what());
            }
            params = sgd_step(params, lg.grad, cfg.eta);
        }
    }
    return params;
}

EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const Dataset& test) {
    if (test.size() < 1) throw ConfigError("empty test set");
    constexpr int kChunk = 1024;
    double loss_sum = 0.0;
    long correct = 0;
    for (int begin = 0; begin < test.size(); begin += kChunk) {
        int end = std::min(test.size(), begin + kChunk);
        Batch b;
        b.inputs = Matrix(end - begin, test.dim());
        b.labels.assign(test.labels.begin() + begin, test.labels.begin() + end);
        std::copy(test.inputs.row(begin), test.inputs.row(begin) + static_cast<std::size_t>(end - begin) * test.dim(),
                  b.inputs.data.begin());
        Matrix logits = forward(spec, params, b).logits;
        for (int i = 0; i < logits.rows; ++i) {
            const double* z = logits.row(i);
            int c = logits.cols;
            double m = z[0];
            int argmax = 0;
            for (int j = 1; j < c; ++j) {
                if (z[j] > m) {
                    m = z[j];
                    argmax = j;
                }
            }
            double sum = 0.0;
            for (int j = 0; j < c; ++j) sum += std::exp(z[j] - m);
            int y = b.labels[static_cast<std::size_t>(i)];
            loss_sum += -(z[y] - m - std::log(sum));
            if (argmax == y) ++correct;
        }
    }
    return {loss_sum / test.size(), static_cast<double>(correct) / test.size()};
}

RoundMetrics run_round(const ModelSpec& model_spec, std::vector<ClientState>& clients,
                       const FusionPlan& plan, const MethodConfig& cfg, int t,
                       WeightMatrix* weights_out) {
    auto start = std::chrono::steady_clock::now();
    const int n = static_cast<int>(clients.size());
    if (n < 2) throw ConfigError("need at least 2 clients");

    // Local training against the round's snapshot of targets.
    RoundUploads uploads(static_cast<std::size_t>(n));
    parallel_for(n, cfg.threads, [&](int i) {
        uploads[static_cast<std::size_t>(i)] =
            local_train(model_spec, clients[static_cast<std::size_t>(i)], cfg, plan, t);
    });

    // Server fusion. FedAmp fuses the whole model as one block so distances
    // are whole-model distances.
    WeightMatrix weights;
    if (cfg.method == Method::kFedAmp) {
        RoundUploads concat(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            concat[static_cast<std::size_t>(i)].layers.push_back(
                concat_model(uploads[static_cast<std::size_t>(i)]));
        }
        FusionResult fr = fuse_round(concat, plan, cfg.sim);
        weights = std::move(fr.weights);
        for (int i = 0; i < n; ++i) {
            ClientState& cs = clients[static_cast<std::size_t>(i)];
            cs.params = std::move(uploads[static_cast<std::size_t>(i)]);
            cs.personalized_target = split_model(
                model_spec, fr.per_client[static_cast<std::size_t>(i)].layers[0]);
            if (cfg.install_personalized_layers) cs.params = *cs.personalized_target;
        }
    } else {
        FusionResult fr = fuse_round(uploads, plan, cfg.sim);
        weights = std::move(fr.weights);
        bool has_personalized = plan.threshold_r > 0;
        for (int i = 0; i < n; ++i) {
            ClientState& cs = clients[static_cast<std::size_t>(i)];
            cs.params = std::move(uploads[static_cast<std::size_t>(i)]);
            ModelParams& fused = fr.per_client[static_cast<std::size_t>(i)];
            if (has_personalized) {
                if (!cs.personalized_target) cs.personalized_target = cs.params;
                for (int l = 1; l <= plan.threshold_r; ++l) {
                    cs.personalized_target->layers[static_cast<std::size_t>(l - 1)] =
                        fused.layers[static_cast<std::size_t>(l - 1)];
                    if (cfg.install_personalized_layers) {
                        cs.params.layers[static_cast<std::size_t>(l - 1)] =
                            cs.personalized_target->layers[static_cast<std::size_t>(l - 1)];
                    }
                }
            } else {
                cs.personalized_target.reset();
            }
            // Generic layers are genuinely shared: install the fused layer
            // and keep it as the penalty target.
            for (int l = plan.threshold_r + 1; l <= plan.depth; ++l) {
                cs.params.layers[static_cast<std::size_t>(l - 1)] =
                    fused.layers[static_cast<std::size_t>(l - 1)];
                cs.global_layers[l] = fused.layers[static_cast<std::size_t>(l - 1)];
            }
        }
    }

    // Personalized accuracy: each client's own model on its own test split.
    RoundMetrics metrics;
    metrics.round = t;
    metrics.train_loss.resize(static_cast<std::size_t>(n));
    metrics.test_loss.resize(static_cast<std::size_t>(n));
    metrics.test_acc.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const ClientState& cs = clients[static_cast<std::size_t>(i)];
        metrics.train_loss[static_cast<std::size_t>(i)] =
            evaluate(model_spec, cs.params, cs.shard.train).loss;
        EvalResult ev = evaluate(model_spec, cs.params, cs.shard.test);
        metrics.test_loss[static_cast<std::size_t>(i)] = ev.loss;
        metrics.test_acc[static_cast<std::size_t>(i)] = ev.accuracy;
    }
    metrics.train_loss_mean =
        std::accumulate(metrics.train_loss.begin(), metrics.train_loss.end(), 0.0) / n;
    metrics.test_loss_mean =
        std::accumulate(metrics.test_loss.begin(), metrics.test_loss.end(), 0.0) / n;
    metrics.acc_mean = std::accumulate(metrics.test_acc.begin(), metrics.test_acc.end(), 0.0) / n;
    double var = 0.0;
    for (double a : metrics.test_acc) var += (a - metrics.acc_mean) * (a - metrics.acc_mean);
    metrics.acc_std = std::sqrt(var / n);
    metrics.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
    if (weights_out) *weights_out = std::move(weights);
    return metrics;
}

std::vector<RoundMetrics> run_experiment(const ModelSpec& model_spec,
                                         const std::vector<ClientShard>& shards,
                                         const MethodConfig& cfg,
                                         std::vector<WeightMatrix>* weight_log) {
    if (cfg.rounds < 1) throw ConfigError("rounds must be >= 1");
    if (cfg.local_steps < 1) throw ConfigError("local_steps must be >= 1");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.eta <= 0.0) throw ConfigError("eta must be > 0");

    FusionPlan plan = plan_for_method(model_spec, cfg);
    ModelParams init = init_model(model_spec, cfg.seed);

    std::vector<ClientState> clients;
    clients.reserve(shards.size());
    for (const auto& shard : shards) {
        ClientState cs;
        cs.client_id = shard.client_id;
        cs.shard = shard;
        cs.params = init;
        // Round 1 penalties pull toward the broadcast initialization, so
        // every round trains against well-defined targets.
        if (cfg.method == Method::kFedAmp) {
            cs.personalized_target = init;
        } else {
            if (plan.threshold_r > 0) cs.personalized_target = init;
            for (int l = plan.threshold_r + 1; l <= plan.depth; ++l) {
                cs.global_layers[l] = init.layers[static_cast<std::size_t>(l - 1)];
            }
        }
        clients.push_back(std::move(cs));
    }

    std::vector<RoundMetrics> metrics;
    metrics.reserve(static_cast<std::size_t>(cfg.rounds));
    for (int t = 1; t <= cfg.rounds; ++t) {
        WeightMatrix weights;
        metrics.push_back(run_round(model_spec, clients, plan, cfg, t,
                                    weight_log ? &weights : nullptr));
        if (weight_log) weight_log->push_back(std::move(weights));
    }
    return metrics;
}

}  // namespace pfedcfr
