// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "simdet/precision.hpp"
#include "simdet/syncbn.hpp"
#include "simdet/tensor.hpp"

namespace simdet {

// Full training state at the end of a step. Buffers are FP32 and round
// trip bit-exactly, so a resumed run continues bitwise-identically.
struct CheckpointState {
    uint64_t config_digest = 0;
    int64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> params; // fixed order, F32 masters
    std::vector<float> velocity;                        // flat, same order
    LossScaleState scale;
    std::vector<RunningStats> running; // one per BN layer
};

// Binary format (little endian): magic "SDCK", u32 version, u64 config
// digest, i64 step, u32 param count, then per parameter
// (u16 name length, name, u8 dtype, u8 rank, i64 dims, f32 data),
// u64 velocity length + f32 data, the loss-scale state, u32 running-stat
// blocks (f32 momentum, u64 channels, f32 means, f32 vars).
void save_checkpoint(const CheckpointState& st, const std::string& path);
// Throws FormatError on bad magic/version/truncation.
CheckpointState load_checkpoint(const std::string& path);

} // namespace simdet
