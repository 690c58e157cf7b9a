// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "simdet/config.hpp"
#include "simdet/model.hpp"
#include "simdet/tensor.hpp"

namespace simdet {

struct TrainOptions {
    int64_t inject_inf_step = -1;  // poison gradients at this 1-based step (tests)
    std::string resume_from;       // checkpoint path; empty = fresh run
    bool force_resume = false;     // skip the config-digest check
    bool write_outputs = true;     // metrics / resolved config / checkpoint files
};

struct TrainResult {
    std::string metrics_csv;              // rows for the executed steps
    std::vector<double> losses;           // global per-step loss
    std::vector<uint64_t> weight_digests; // master-weight digest after each step
    std::vector<float> final_weights;     // flat FP32 masters
    int64_t skipped = 0;                  // overflow-skipped steps
    double final_scale = 1.0;
    int64_t first_step = 1, last_step = 0;
    double wall_seconds = 0.0;
    std::string metrics_path, checkpoint_path; // empty unless written
};

// K-worker synchronous data-parallel training per the config. Workers
// run in one process (threads), synchronize through the configured
// backend, and apply bitwise-identical updates; rank 0 owns metrics and
// the final checkpoint.
TrainResult run_training(const Config& config, const TrainOptions& opts = {});

// flat packing in model_param_shapes order (shared by comm + checkpoints)
std::vector<float> pack_params(const ModelSpec& spec, const std::map<std::string, Tensor>& params);
std::map<std::string, Tensor> unpack_params(const ModelSpec& spec, const std::vector<float>& flat);

ModelSpec model_spec_from(const Config& c);

uint64_t fnv1a(const void* data, size_t bytes);

} // namespace simdet
