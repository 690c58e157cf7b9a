// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "simdet/comm.hpp"
#include "simdet/memopt.hpp"
#include "simdet/syncbn.hpp"
#include "simdet/tensor.hpp"

namespace simdet {

// Reference CNN used by every benchmark:
//   conv(C->8,3x3) -> BN+leaky (or fused IABN) -> [identity padding]
//   -> conv(8->16,3x3) -> BN+relu -> flatten -> fc(->hidden) -> relu
//   -> fc(->classes) -> cross-entropy.
// Treating each entry as one chain layer, pad_layers > 0 pads the chain
// with identity layers (leaky slope 1) to that total length.
struct ModelSpec {
    int channels = 3;
    int image = 8;
    int hidden = 64;
    int classes = 4;
    int pad_layers = 0;
    std::string bn_mode = "plain"; // plain | sync | iabn
    float eps = 1e-5f;
    float slope = 0.1f;
};

// layer count of the unpadded chain
constexpr int kBaseLayers = 9;

// Fixed parameter order; all flat packing follows it.
std::vector<std::pair<std::string, Shape>> model_param_shapes(const ModelSpec& spec);
int64_t model_param_numel(const ModelSpec& spec);

// FP32 parameters, deterministic in the seed (uniform fan-in init,
// gamma 1, beta 0).
std::map<std::string, Tensor> init_model_params(const ModelSpec& spec, uint64_t seed);

// Batch statistics observed by the two BN layers during the last forward
// (running-stat updates happen outside the tape).
struct BnCapture {
    BNStats bn1, bn2;
};

// Record-ready chain. `weights` must outlive the returned layers; in
// mixed precision pass FP16 shadows for conv/fc weights (BN parameters
// stay FP32). grad_scale folds loss scaling into the loss op's backward,
// so reported losses stay unscaled while every gradient emerges
// pre-multiplied. group is consulted only in bn_mode "sync".
std::vector<ChainLayer> build_model_chain(const ModelSpec& spec,
                                          const std::map<std::string, Tensor>& weights,
                                          std::vector<int> labels, double grad_scale,
                                          CommGroup* group, BnCapture* capture);

} // namespace simdet
