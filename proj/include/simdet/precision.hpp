// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>

#include "simdet/tensor.hpp"

namespace simdet {

enum class ScaleMode { Static, Dynamic };

// Dynamic loss scale state. Defaults follow the common recipe: start at
// 2^16, grow x2 after 2000 good steps, back off x0.5 on overflow.
struct LossScaleState {
    double scale = 65536.0; // power of two
    int64_t good_steps = 0;
    ScaleMode mode = ScaleMode::Dynamic;
    int64_t growth_interval = 2000;
    double growth_factor = 2.0;
    double backoff_factor = 0.5;
    double min_scale = 1.0;
    double max_scale = 16777216.0; // 2^24

    void validate() const;
};

// loss * scale; by the chain rule every gradient emerges pre-multiplied.
Tensor scale_loss(const Tensor& loss, const LossScaleState& state);

// Divide by the scale in FP32; overflow is true iff any raw gradient
// element is non-finite (the step must then be skipped).
bool unscale_and_check(std::span<float> grads, const LossScaleState& state);

void update_scale(LossScaleState& state, bool overflow);

// FP32 conversion to an FP16 tensor (values rounded through binary16).
Tensor to_half(const Tensor& x);

// Authoritative FP32 weights with FP16 shadows for mixed forward passes.
struct MasterParam {
    Tensor master;   // F32
    Tensor shadow;   // F16, refreshed after every step
    Tensor velocity; // F32 momentum buffer
};

struct MasterWeights {
    std::map<std::string, MasterParam> params;

    void add(const std::string& name, Tensor master_f32);
    void refresh_shadows();
    int64_t master_bytes() const;
    int64_t shadow_bytes() const;
};

// v <- momentum*v + g; w <- w - lr*v, all FP32. skip leaves everything
// untouched (overflow steps).
void sgd_step_master(MasterWeights& weights, const std::map<std::string, Tensor>& grads, float lr,
                     float momentum, bool skip);

} // namespace simdet
