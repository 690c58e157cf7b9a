// SPDX-License-Identifier: Apache-2.0
#include "simdet/precision.hpp"

#include <algorithm>
#include <cmath>

#include "simdet/errors.hpp"

namespace simdet {

namespace {

bool is_pow2(double x) {
    int exp;
    return x > 0.0 && std::frexp(x, &exp) == 0.5;
}

} // namespace

void LossScaleState::validate() const {
    if (!is_pow2(scale)) throw ContractError("loss scale must be a positive power of two");
    if (scale < min_scale || scale > max_scale) throw ContractError("loss scale outside [min,max]");
    if (growth_interval < 1 || growth_factor <= 1.0 || backoff_factor <= 0.0 || backoff_factor >= 1.0) {
        throw ContractError("invalid loss scale policy parameters");
    }
}

Tensor scale_loss(const Tensor& loss, const LossScaleState& state) {
    return scale(loss, static_cast<float>(state.scale));
}

bool unscale_and_check(std::span<float> grads, const LossScaleState& state) {
    bool overflow = false;
    for (float g : grads) {
        if (!std::isfinite(g)) {
            overflow = true;
            break;
        }
    }
    const float inv = static_cast<float>(1.0 / state.scale);
    for (float& g : grads) g *= inv;
    return overflow;
}

void update_scale(LossScaleState& state, bool overflow) {
    if (state.mode == ScaleMode::Static) return;
    if (overflow) {
        state.scale = std::max(state.min_scale, state.scale * state.backoff_factor);
        state.good_steps = 0;
        return;
    }
    if (++state.good_steps >= state.growth_interval) {
        state.scale = std::min(state.max_scale, state.scale * state.growth_factor);
        state.good_steps = 0;
    }
}

Tensor to_half(const Tensor& x) { return x.astype(DType::F16); }

void MasterWeights::add(const std::string& name, Tensor master_f32) {
    MasterParam p;
    p.velocity = Tensor::zeros(master_f32.shape(), DType::F32);
    p.shadow = master_f32.astype(DType::F16);
    p.master = std::move(master_f32);
    params.emplace(name, std::move(p));
}

void MasterWeights::refresh_shadows() {
    for (auto& [name, p] : params) p.shadow = to_half(p.master);
}

int64_t MasterWeights::master_bytes() const {
    int64_t b = 0;
    for (const auto& [name, p] : params) b += p.master.bytes();
    return b;
}

int64_t MasterWeights::shadow_bytes() const {
    int64_t b = 0;
    for (const auto& [name, p] : params) b += p.shadow.bytes();
    return b;
}

void sgd_step_master(MasterWeights& weights, const std::map<std::string, Tensor>& grads, float lr,
                     float momentum, bool skip) {
    if (skip) return;
    for (auto& [name, p] : weights.params) {
        auto it = grads.find(name);
        if (it == grads.end()) throw ContractError("missing gradient for parameter " + name);
        auto w = p.master.data();
        auto v = p.velocity.data();
        auto g = it->second.data();
        if (g.size() != w.size()) throw ContractError("gradient shape mismatch for parameter " + name);
        for (size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] + g[i];
            w[i] -= lr * v[i];
        }
    }
    weights.refresh_shadows();
}

} // namespace simdet
