// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "simdet/tensor.hpp"

namespace simdet {

// Deterministic synthetic classification set: each class renders a
// Gaussian blob at a class-specific position with class-specific channel
// weights, plus uniform pixel noise. Identical seeds give identical bytes.
struct Dataset {
    Tensor images; // [n, C, H, W], F32
    std::vector<int> labels;
    int classes = 0;
};

Dataset make_synthetic_dataset(uint64_t seed, int64_t n, int channels, int image, int classes,
                               double noise);

// FNV-1a over the raw image bytes and labels (determinism checks).
uint64_t dataset_digest(const Dataset& ds);

// Sample drawn by global batch slot `g` (pure function of seed and g, so
// any worker can compute its shard without coordination).
int64_t sample_index(uint64_t seed, int64_t g, int64_t n);

// Shard for one rank at one 1-based step: slots
// (step-1)*K*batch + rank*batch + j. The concatenation over ranks is the
// same global batch for every K with equal K*batch.
std::pair<Tensor, std::vector<int>> gather_batch(const Dataset& ds, uint64_t seed, int64_t step,
                                                 int rank, int world, int64_t batch, DType dtype);

} // namespace simdet
