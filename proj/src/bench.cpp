// SPDX-License-Identifier: Apache-2.0
#include "simdet/bench.hpp"

#include <cstdio>

#include "simdet/comm.hpp"
#include "simdet/dataset.hpp"
#include "simdet/memopt.hpp"
#include "simdet/model.hpp"
#include "simdet/precision.hpp"
#include "simdet/trainer.hpp"

namespace simdet {

std::vector<ScalingRow> bench_scaling_model(const Config& c) {
    const int64_t P = model_param_numel(model_spec_from(c));
    std::vector<ScalingRow> rows;
    for (const char* algo : {"ring", "ps"}) {
        for (const char* prec : {"fp32", "fp16"}) {
            for (int k : {1, 2, 4, 8}) {
                CostModel m;
                m.bandwidth = c.comm.bandwidth;
                m.latency = c.comm.latency;
                m.payload = static_cast<double>(P) * (std::string(prec) == "fp16" ? 2.0 : 4.0);
                m.workers = k;
                m.algorithm = std::string(algo) == "ps" ? CommAlgo::Ps : CommAlgo::Ring;
                m.compute_seconds = c.comm.compute_seconds;
                m.overlap = c.comm.overlap;
                const SimStep s = simulate_step_time(m);
                rows.push_back({k, algo, prec, m.payload, s.step_seconds, s.efficiency});
            }
        }
    }
    return rows;
}

std::string scaling_model_csv(const std::vector<ScalingRow>& rows) {
    std::string out = "k,algorithm,precision,payload_bytes,step_seconds,efficiency\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%s,%s,%.9g,%.9g,%.9g\n", r.k, r.algorithm.c_str(),
                      r.precision.c_str(), r.payload_bytes, r.step_seconds, r.efficiency);
        out += buf;
    }
    return out;
}

std::vector<MeasuredScalingRow> bench_scaling_measured(const Config& c, int64_t steps) {
    std::vector<MeasuredScalingRow> rows;
    for (int k : {1, 2, 4}) {
        Config v = c;
        v.comm.workers = k;
        v.train.steps = steps;
        TrainOptions o;
        o.write_outputs = false;
        const TrainResult r = run_training(v, o);
        MeasuredScalingRow row;
        row.k = k;
        row.wall_seconds = r.wall_seconds;
        row.steps_per_second = steps / r.wall_seconds;
        rows.push_back(row);
    }
    // per-worker throughput relative to K=1 (equal per-worker batch)
    for (auto& r : rows) r.efficiency = rows[0].wall_seconds / r.wall_seconds;
    return rows;
}

std::string scaling_measured_csv(const std::vector<MeasuredScalingRow>& rows) {
    std::string out = "k,wall_seconds,steps_per_second,efficiency\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.6g,%.6g,%.6g\n", r.k, r.wall_seconds, r.steps_per_second,
                      r.efficiency);
        out += buf;
    }
    return out;
}

OneStepPeaks measure_one_step(const Config& c) {
    const ModelSpec spec = model_spec_from(c);
    const bool mixed = c.precision.mode == "mixed";
    const Dataset ds = make_synthetic_dataset(c.train.seed, c.data.samples, c.data.channels,
                                              c.data.image, c.data.classes, c.data.noise);
    std::map<std::string, Tensor> wmap = init_model_params(spec, c.train.seed);
    if (mixed) {
        for (auto& [name, t] : wmap) {
            if (name.find("gamma") == std::string::npos && name.find("beta") == std::string::npos) {
                t = to_half(t);
            }
        }
    }
    auto [batch, labels] = gather_batch(ds, c.train.seed, 1, 0, 1, c.train.batch_per_worker,
                                        mixed ? DType::F16 : DType::F32);
    MemoryTrace trace;
    auto chain = build_model_chain(spec, wmap, std::move(labels),
                                   mixed ? c.precision.scale_init : 1.0, nullptr, nullptr);
    if (c.memory.checkpoint) {
        const int64_t L = spec.pad_layers > 0 ? spec.pad_layers : kBaseLayers;
        run_checkpointed_backward(chain, batch, plan_checkpoints(L), &trace);
    } else {
        run_chain_backward(chain, batch, &trace);
    }

    const int64_t P = model_param_numel(spec);
    int64_t static_bytes = 2 * P * 4;
    if (mixed) {
        for (const auto& [name, shape] : model_param_shapes(spec)) {
            if (name.find("gamma") == std::string::npos && name.find("beta") == std::string::npos) {
                static_bytes += shape_numel(shape) * 2;
            }
        }
    }
    OneStepPeaks p;
    p.act_peak = trace.peak_for_tag("act");
    p.stat_peak = trace.peak_for_tag("stat") + trace.peak_for_tag("loss");
    p.total_peak = trace.peak() + static_bytes;
    return p;
}

std::vector<MemoryRow> bench_memory(const Config& c) {
    Config base = c;
    if (base.model.pad_layers == 0) base.model.pad_layers = 64;
    base.comm.workers = 1;
    base.precision.mode = "fp32";
    base.bn.mode = "plain";
    base.memory.checkpoint = false;

    struct Mode {
        const char* name;
        bool fp16, chpt, iabn;
    };
    const Mode modes[] = {
        {"fp32", false, false, false},
        {"+FP16", true, false, false},
        {"+FP16+Chpt", true, true, false},
        {"+FP16+Chpt+IABN", true, true, true},
    };
    std::vector<MemoryRow> rows;
    int64_t baseline = 0;
    for (const Mode& m : modes) {
        Config v = base;
        if (m.fp16) v.precision.mode = "mixed";
        if (m.chpt) v.memory.checkpoint = true;
        if (m.iabn) v.bn.mode = "iabn";
        const OneStepPeaks p = measure_one_step(v);
        if (rows.empty()) baseline = p.total_peak;
        rows.push_back({m.name, p.act_peak, p.total_peak,
                        static_cast<double>(p.total_peak) / static_cast<double>(baseline)});
    }
    return rows;
}

std::string memory_csv(const std::vector<MemoryRow>& rows) {
    std::string out = "mode,act_peak_bytes,total_peak_bytes,ratio_vs_fp32\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.6g\n", r.mode.c_str(),
                      static_cast<long long>(r.act_peak), static_cast<long long>(r.total_peak),
                      r.ratio_vs_fp32);
        out += buf;
    }
    return out;
}

} // namespace simdet
