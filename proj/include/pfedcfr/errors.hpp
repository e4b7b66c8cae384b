// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pfedcfr {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dimension or length mismatch; carries the 1-based layer index when known.
class ShapeError : public Error {
public:
    ShapeError(int layer, const std::string& msg)
        : Error("layer " + std::to_string(layer) + ": " + msg), layer_(layer) {}
    explicit ShapeError(const std::string& msg) : Error(msg), layer_(0) {}
    int layer() const { return layer_; }

private:
    int layer_;  // 0 when no layer applies
};

// Malformed IDX file (bad magic, truncation, count mismatch).
class DataFormatError : public Error {
public:
    DataFormatError(const std::string& file, long offset, const std::string& msg)
        : Error(file + " @" + std::to_string(offset) + ": " + msg),
          file_(file),
          offset_(offset) {}
    const std::string& file() const { return file_; }
    long offset() const { return offset_; }

private:
    std::string file_;
    long offset_;
};

// Heterogeneous partition cannot satisfy its contract (e.g. a class has
// fewer samples than clients holding it).
class PartitionError : public Error {
public:
    explicit PartitionError(const std::string& msg) : Error(msg) {}
};

// A personalized fusion row lost self-weight dominance: 1 - sum of
// off-diagonal weights would be <= 0. Raised instead of clamping so a
// misconfigured alpha_t/sigma pair is visible. layer is 1-based, 0 when the
// fusion ran outside a plan.
class NonContractiveWeightsError : public Error {
public:
    NonContractiveWeightsError(int client, double offdiag_sum, int layer = 0)
        : Error((layer > 0 ? "layer " + std::to_string(layer) + ": " : std::string()) +
                "personalized fusion weights for client " + std::to_string(client) +
                " are non-contractive: off-diagonal sum " + std::to_string(offdiag_sum) +
                " >= 1"),
          client_(client),
          offdiag_sum_(offdiag_sum),
          layer_(layer) {}
    int client() const { return client_; }
    double offdiag_sum() const { return offdiag_sum_; }
    int layer() const { return layer_; }

private:
    int client_;
    double offdiag_sum_;
    int layer_;
};

// Loss became NaN/Inf; message carries round/step context where available.
class NonFiniteLossError : public Error {
public:
    explicit NonFiniteLossError(const std::string& msg) : Error(msg) {}
};

// Experiment configuration failed validation; message names the field.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace pfedcfr
