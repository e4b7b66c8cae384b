// SPDX-License-Identifier: Apache-2.0

#include "pfedcfr/nn.hpp"

#include <cmath>
#include <string>

#include "pfedcfr/rng.hpp"

namespace pfedcfr {

ModelSpec::ModelSpec(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("model must have at least one layer");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (l.fan_in < 1 || l.fan_out < 1) {
            throw ShapeError(static_cast<int>(i + 1), "fan_in and fan_out must be >= 1");
        }
        if (i + 1 < layers_.size() && l.fan_out != layers_[i + 1].fan_in) {
            throw ShapeError(static_cast<int>(i + 2),
                             "fan_in " + std::to_string(layers_[i + 1].fan_in) +
                                 " does not match previous fan_out " + std::to_string(l.fan_out));
        }
        // Roles must be a feature prefix followed by a decision suffix.
        if (i > 0 && layers_[i - 1].role == LayerRole::kDecision && l.role == LayerRole::kFeature) {
            throw ShapeError(static_cast<int>(i + 1), "feature layer after a decision layer");
        }
    }
    if (layers_.back().activation != Activation::kIdentity) {
        throw ShapeError(depth(), "last layer must have identity activation");
    }
}

int ModelSpec::num_feature_layers() const {
    int n = 0;
    for (const auto& l : layers_) {
        if (l.role != LayerRole::kFeature) break;
        ++n;
    }
    return n;
}

void check_congruent(const ModelSpec& spec, const ModelParams& params) {
    if (static_cast<int>(params.layers.size()) != spec.depth()) {
        throw ShapeError("params have " + std::to_string(params.layers.size()) +
                         " layers, spec has " + std::to_string(spec.depth()));
    }
    for (int l = 0; l < spec.depth(); ++l) {
        auto want = static_cast<std::size_t>(spec.layer(l).param_count());
        if (params.layers[l].size() != want) {
            throw ShapeError(l + 1, "expected " + std::to_string(want) + " params, got " +
                                        std::to_string(params.layers[l].size()));
        }
    }
}

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(derive_seed(seed, seed_tag::kInit));
    ModelParams params;
    params.layers.reserve(spec.layers().size());
    for (const auto& l : spec.layers()) {
        LayerVec v(static_cast<std::size_t>(l.param_count()), 0.0);
        double bound = std::sqrt(6.0 / (l.fan_in + l.fan_out));
        for (int i = 0; i < l.fan_in * l.fan_out; ++i) {
            v[static_cast<std::size_t>(i)] = rng.uniform(-bound, bound);
        }
        // Biases stay zero.
        params.layers.push_back(std::move(v));
    }
    return params;
}

Gradient zero_gradient(const ModelSpec& spec) {
    Gradient g;
    g.layers.reserve(spec.layers().size());
    for (const auto& l : spec.layers()) {
        g.layers.emplace_back(static_cast<std::size_t>(l.param_count()), 0.0);
    }
    return g;
}

namespace {

// y = x * W^T + b, W row-major [fan_out x fan_in] at the front of `layer`.
void affine(const Matrix& x, const LayerVec& layer, const LayerSpec& spec, Matrix& out) {
    const double* w = layer.data();
    const double* b = layer.data() + static_cast<std::size_t>(spec.fan_in) * spec.fan_out;
    out = Matrix(x.rows, spec.fan_out);
    for (int i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* oi = out.row(i);
        for (int j = 0; j < spec.fan_out; ++j) {
            const double* wj = w + static_cast<std::size_t>(j) * spec.fan_in;
            double acc = b[j];
            for (int k = 0; k < spec.fan_in; ++k) acc += wj[k] * xi[k];
            oi[j] = acc;
        }
    }
}

void apply_activation(Activation act, Matrix& m) {
    if (act == Activation::kIdentity) return;
    for (auto& v : m.data) v = v > 0.0 ? v : 0.0;
}

}  // namespace

ForwardResult forward(const ModelSpec& spec, const ModelParams& params, const Batch& batch) {
    check_congruent(spec, params);
    if (batch.inputs.cols != spec.input_dim()) {
        throw ShapeError(1, "batch has " + std::to_string(batch.inputs.cols) +
                                " features, layer expects " + std::to_string(spec.input_dim()));
    }
    ForwardResult r;
    r.cache.inputs.resize(static_cast<std::size_t>(spec.depth()));
    r.cache.pre_activations.resize(static_cast<std::size_t>(spec.depth()));
    Matrix x = batch.inputs;
    for (int l = 0; l < spec.depth(); ++l) {
        r.cache.inputs[static_cast<std::size_t>(l)] = x;
        Matrix z;
        affine(x, params.layers[static_cast<std::size_t>(l)], spec.layer(l), z);
        r.cache.pre_activations[static_cast<std::size_t>(l)] = z;
        apply_activation(spec.layer(l).activation, z);
        x = std::move(z);
    }
    r.logits = std::move(x);
    return r;
}

namespace {

// Mean cross-entropy and dL/dlogits via the max-subtracted softmax.
double softmax_xent(const Matrix& logits, const std::vector<int>& labels, Matrix& dlogits) {
    const int b = logits.rows;
    const int c = logits.cols;
    dlogits = Matrix(b, c);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        const double* zi = logits.row(i);
        double* di = dlogits.row(i);
        double m = zi[0];
        for (int j = 1; j < c; ++j) m = std::max(m, zi[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) {
            di[j] = std::exp(zi[j] - m);
            sum += di[j];
        }
        int y = labels[static_cast<std::size_t>(i)];
        loss += -(zi[y] - m - std::log(sum));
        double inv = 1.0 / sum;
        for (int j = 0; j < c; ++j) {
            di[j] = di[j] * inv / b;
        }
        di[y] -= 1.0 / b;
    }
    return loss / b;
}

}  // namespace

LossGrad loss_and_grad(const ModelSpec& spec, const ModelParams& params, const Batch& batch,
                       const PenaltyFn* penalty, double data_loss_weight) {
    const int bsz = batch.inputs.rows;
    if (bsz < 1) throw ShapeError("empty batch");
    if (static_cast<int>(batch.labels.size()) != bsz) {
        throw ShapeError("batch has " + std::to_string(bsz) + " rows but " +
                         std::to_string(batch.labels.size()) + " labels");
    }
    for (int lbl : batch.labels) {
        if (lbl < 0 || lbl >= spec.num_classes()) {
            throw ShapeError("label " + std::to_string(lbl) + " out of range [0, " +
                             std::to_string(spec.num_classes()) + ")");
        }
    }

    ForwardResult fw = forward(spec, params, batch);

    LossGrad out;
    Matrix delta;  // dL/d(pre-activation of current layer)
    out.data_loss = softmax_xent(fw.logits, batch.labels, delta);
    out.loss = data_loss_weight * out.data_loss;
    out.grad = zero_gradient(spec);
    if (data_loss_weight != 0.0 && data_loss_weight != 1.0) {
        for (auto& v : delta.data) v *= data_loss_weight;
    }

    // Last layer is identity, so delta already matches its pre-activation.
    if (data_loss_weight != 0.0) {
        for (int l = spec.depth() - 1; l >= 0; --l) {
            const LayerSpec& ls = spec.layer(l);
            const Matrix& x = fw.cache.inputs[static_cast<std::size_t>(l)];
            LayerVec& g = out.grad.layers[static_cast<std::size_t>(l)];
            double* gw = g.data();
            double* gb = g.data() + static_cast<std::size_t>(ls.fan_in) * ls.fan_out;

            for (int i = 0; i < delta.rows; ++i) {
                const double* di = delta.row(i);
                const double* xi = x.row(i);
                for (int j = 0; j < ls.fan_out; ++j) {
                    double d = di[j];
                    if (d == 0.0) continue;
                    double* gwj = gw + static_cast<std::size_t>(j) * ls.fan_in;
                    for (int k = 0; k < ls.fan_in; ++k) gwj[k] += d * xi[k];
                    gb[j] += d;
                }
            }

            if (l > 0) {
                // Propagate: dX = delta * W, then mask by relu'(Z) of the layer below.
                const double* w = params.layers[static_cast<std::size_t>(l)].data();
                Matrix prev(delta.rows, ls.fan_in);
                for (int i = 0; i < delta.rows; ++i) {
                    const double* di = delta.row(i);
                    double* pi = prev.row(i);
                    for (int j = 0; j < ls.fan_out; ++j) {
                        double d = di[j];
                        if (d == 0.0) continue;
                        const double* wj = w + static_cast<std::size_t>(j) * ls.fan_in;
                        for (int k = 0; k < ls.fan_in; ++k) pi[k] += d * wj[k];
                    }
                }
                if (spec.layer(l - 1).activation == Activation::kRelu) {
                    const Matrix& z = fw.cache.pre_activations[static_cast<std::size_t>(l - 1)];
                    for (std::size_t i = 0; i < prev.data.size(); ++i) {
                        if (z.data[i] <= 0.0) prev.data[i] = 0.0;
                    }
                }
                delta = std::move(prev);
            }
        }
    }

    if (penalty && *penalty) {
        PenaltyTerm p = (*penalty)(params);
        out.loss += p.value;
        for (int l = 0; l < spec.depth(); ++l) {
            LayerVec& g = out.grad.layers[static_cast<std::size_t>(l)];
            const LayerVec& pg = p.grad.layers[static_cast<std::size_t>(l)];
            if (pg.size() != g.size()) {
                throw ShapeError(l + 1, "penalty gradient length " + std::to_string(pg.size()) +
                                            " does not match params " + std::to_string(g.size()));
            }
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += pg[i];
        }
    }

    if (!std::isfinite(out.loss)) {
        throw NonFiniteLossError("loss is not finite (" + std::to_string(out.loss) + ")");
    }
    return out;
}

ModelParams sgd_step(const ModelParams& params, const Gradient& grad, double eta) {
    ModelParams next = params;
    for (std::size_t l = 0; l < next.layers.size(); ++l) {
        LayerVec& v = next.layers[l];
        const LayerVec& g = grad.layers[l];
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= eta * g[i];
    }
    return next;
}

double layer_distance_sq(const LayerVec& a, const LayerVec& b) {
    if (a.size() != b.size()) {
        throw ShapeError("layer vectors have lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace pfedcfr
