// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "simdet/autograd.hpp"
#include "simdet/memtrace.hpp"
#include "simdet/tensor.hpp"

namespace simdet {

// Segment layout for sqrt(L) gradient checkpointing. boundaries are the
// 1-based layer counts after which an activation is retained; the final
// layer output is implicit.
struct CheckpointPlan {
    int64_t layers = 0;
    std::vector<int64_t> boundaries;

    int64_t segments() const { return static_cast<int64_t>(boundaries.size()) + 1; }
};

enum class CheckpointPolicy { Sqrt, Explicit };

CheckpointPlan plan_checkpoints(int64_t layers);
CheckpointPlan plan_checkpoints(int64_t layers, std::vector<int64_t> boundaries);

// Binds named parameter tensors as tape leaves, once per tape, so chain
// runners can collect gradients by name.
class ParamBinder {
public:
    explicit ParamBinder(Tape& tape) : tape_(&tape) {}
    ValueId bind(const std::string& name, const Tensor& value);
    const std::map<std::string, ValueId>& bound() const { return ids_; }

private:
    Tape* tape_;
    std::map<std::string, ValueId> ids_;
};

// One layer of a linear chain; apply records the layer's ops and returns
// the output id. Parameters go through the binder.
struct ChainLayer {
    std::string name;
    std::function<ValueId(Tape&, ValueId, ParamBinder&)> apply;
};

struct ChainResult {
    float loss = 0.0f;
    Tensor input_grad;
    std::map<std::string, Tensor> param_grads;
};

// Plain backward over the whole chain on one tape. Intermediates are
// released as soon as the next layer has consumed them.
ChainResult run_chain_backward(std::span<const ChainLayer> chain, const Tensor& input,
                               MemoryTrace* trace = nullptr);

// Checkpointed variant: only segment boundary activations survive the
// forward pass; each segment is re-recorded during backward. Gradients
// are bitwise-equal to run_chain_backward on deterministic chains.
ChainResult run_checkpointed_backward(std::span<const ChainLayer> chain, const Tensor& input,
                                      const CheckpointPlan& plan, MemoryTrace* trace = nullptr);

// ---- in-place activation batch normalization ----
// y = leaky_relu(gamma * (x - mean) * invstd + beta); only y and the
// per-channel statistics are retained, x is reconstructed in backward by
// inverting the activation.

struct IabnSaved {
    Tensor y;
    std::vector<float> mean, invstd, gamma, beta;
    float eps = 0.0f, slope = 0.0f;
};

struct IabnGrads {
    Tensor dx;
    std::vector<float> dgamma, dbeta;
};

std::pair<Tensor, IabnSaved> iabn_forward(const Tensor& x, std::span<const float> gamma,
                                          std::span<const float> beta, float eps, float slope);
IabnGrads iabn_backward(const Tensor& dy, const IabnSaved& saved);

} // namespace simdet
