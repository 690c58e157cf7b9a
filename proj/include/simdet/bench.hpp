// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "simdet/config.hpp"

namespace simdet {

// ---- scaling story ----

struct ScalingRow {
    int k = 1;
    std::string algorithm; // ring | ps
    std::string precision; // fp32 | fp16
    double payload_bytes = 0.0;
    double step_seconds = 0.0;
    double efficiency = 0.0;
};

// Closed-form sweep over K in {1,2,4,8} x {ring,ps} x {fp32,fp16} with
// the config's cost-model parameters; payload is the model's gradient
// size at the row's precision.
std::vector<ScalingRow> bench_scaling_model(const Config& c);
std::string scaling_model_csv(const std::vector<ScalingRow>& rows);

struct MeasuredScalingRow {
    int k = 1;
    double wall_seconds = 0.0;
    double steps_per_second = 0.0;
    double efficiency = 0.0; // per-worker throughput vs K=1
};

// Wall-clock runs over the in-process transport for K in {1,2,4}.
std::vector<MeasuredScalingRow> bench_scaling_measured(const Config& c, int64_t steps);
std::string scaling_measured_csv(const std::vector<MeasuredScalingRow>& rows);

// ---- memory story ----

struct OneStepPeaks {
    int64_t act_peak = 0;   // activation tensors (tag "act")
    int64_t stat_peak = 0;  // retained BN statistics and the like
    int64_t total_peak = 0; // act + stat + weights/optimizer/shadows
};

// One metered training step, single worker, honoring the config's
// precision / bn / memory flags.
OneStepPeaks measure_one_step(const Config& c);

struct MemoryRow {
    std::string mode;
    int64_t act_peak = 0;
    int64_t total_peak = 0;
    double ratio_vs_fp32 = 0.0; // total peak vs the fp32 baseline
};

// Cumulative mode sweep fp32 -> +FP16 -> +FP16+Chpt -> +FP16+Chpt+IABN
// on the (padded) reference model.
std::vector<MemoryRow> bench_memory(const Config& c);
std::string memory_csv(const std::vector<MemoryRow>& rows);

} // namespace simdet
