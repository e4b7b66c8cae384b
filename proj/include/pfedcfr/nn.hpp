// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pfedcfr/errors.hpp"

namespace pfedcfr {

// Row-major dense matrix of doubles.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    double* row(int r) { return data.data() + static_cast<std::size_t>(r) * cols; }
    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * cols; }
};

enum class Activation { kRelu, kIdentity };
enum class LayerRole { kFeature, kDecision };

struct LayerSpec {
    int fan_in = 0;
    int fan_out = 0;
    Activation activation = Activation::kRelu;
    LayerRole role = LayerRole::kFeature;

    // Flat parameter count: row-major weights [fan_out x fan_in], then bias.
    int param_count() const { return fan_in * fan_out + fan_out; }
};

// Validated stack of fully connected layers. Feature layers form a prefix,
// decision layers the suffix; the last layer feeds softmax so it must have
// identity activation.
class ModelSpec {
public:
    explicit ModelSpec(std::vector<LayerSpec> layers);

    int depth() const { return static_cast<int>(layers_.size()); }
    const LayerSpec& layer(int i) const { return layers_[static_cast<std::size_t>(i)]; }
    const std::vector<LayerSpec>& layers() const { return layers_; }
    int input_dim() const { return layers_.front().fan_in; }
    int num_classes() const { return layers_.back().fan_out; }
    int num_feature_layers() const;

private:
    std::vector<LayerSpec> layers_;
};

// One flat vector per layer (weights then bias), the unit of fusion.
using LayerVec = std::vector<double>;

struct ModelParams {
    std::vector<LayerVec> layers;
};

// Same shape as ModelParams.
struct Gradient {
    std::vector<LayerVec> layers;
};

struct Batch {
    Matrix inputs;            // batch_size x input_dim
    std::vector<int> labels;  // class indices in [0, C)
};

// Activations recorded by forward() so the backward pass can reuse them.
struct ForwardCache {
    std::vector<Matrix> inputs;          // per layer: the layer's input
    std::vector<Matrix> pre_activations; // per layer: affine output before activation
};

struct ForwardResult {
    Matrix logits;
    ForwardCache cache;
};

// Optional penalty hook for loss_and_grad: returns the penalty value and its
// gradient, shape-congruent with the params it was called on.
struct PenaltyTerm {
    double value = 0.0;
    Gradient grad;
};
using PenaltyFn = std::function<PenaltyTerm(const ModelParams&)>;

struct LossGrad {
    double loss = 0.0;       // data loss + penalty
    double data_loss = 0.0;  // mean softmax cross-entropy alone
    Gradient grad;
};

// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
// Bit-identical output for identical (spec, seed).
ModelParams init_model(const ModelSpec& spec, std::uint64_t seed);

Gradient zero_gradient(const ModelSpec& spec);

ForwardResult forward(const ModelSpec& spec, const ModelParams& params, const Batch& batch);

// Mean softmax cross-entropy over the batch plus the optional penalty, with
// the analytic gradient of the total. data_loss_weight scales the data term
// (1.0 for normal training; 0 isolates the penalty).
LossGrad loss_and_grad(const ModelSpec& spec, const ModelParams& params, const Batch& batch,
                       const PenaltyFn* penalty = nullptr, double data_loss_weight = 1.0);

// One plain SGD step; the input is left untouched.
ModelParams sgd_step(const ModelParams& params, const Gradient& grad, double eta);

// Squared Euclidean distance between two flat layer vectors.
double layer_distance_sq(const LayerVec& a, const LayerVec& b);

// Shape checks shared with the fusion and runtime modules.
void check_congruent(const ModelSpec& spec, const ModelParams& params);

}  // namespace pfedcfr
