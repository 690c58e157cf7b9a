// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "simdet/comm.hpp"
#include "simdet/tensor.hpp"

namespace simdet {

// Per-channel batch statistics, aggregated across workers as a single
// all-reduce of (sum, sumsq, count) = 2C+1 values.
struct BNStats {
    int64_t count = 0;                 // global N*H*W
    std::vector<float> sum, sumsq;     // global, per channel
    std::vector<float> mean, invstd;   // derived; var clamped at 0
};

struct RunningStats {
    std::vector<float> mean, var;
    float momentum = 0.9f;
};

struct BnGrads {
    Tensor dx;
    std::vector<float> dgamma, dbeta;
};

// Cross-worker BN forward. All group members must call collectively with
// the same channel count; local batch sizes may differ. group == nullptr
// (or K == 1) is plain single-worker BN.
std::pair<Tensor, BNStats> syncbn_forward(const Tensor& x_local, std::span<const float> gamma,
                                          std::span<const float> beta, float eps, CommGroup* group);

// Backward reduces per-channel sum(dy) and sum(dy*xhat) across the group;
// dgamma/dbeta are the global quantities and identical on every worker.
BnGrads syncbn_backward(const Tensor& dy_local, const Tensor& x_local, const BNStats& stats,
                        std::span<const float> gamma, CommGroup* group);

// running <- (1-m)*running + m*batch, with the unbiased variance
// (count/(count-1)) correction; skipped with a warning for count <= 1.
void update_running_stats(RunningStats& running, const BNStats& stats);

} // namespace simdet
