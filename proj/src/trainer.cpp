// SPDX-License-Identifier: Apache-2.0
#include "simdet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "simdet/checkpoint.hpp"
#include "simdet/comm.hpp"
#include "simdet/dataset.hpp"
#include "simdet/memopt.hpp"
#include "simdet/precision.hpp"

namespace simdet {

uint64_t fnv1a(const void* data, size_t bytes) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < bytes; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

ModelSpec model_spec_from(const Config& c) {
    ModelSpec s;
    s.channels = c.data.channels;
    s.image = c.data.image;
    s.hidden = c.model.hidden;
    s.classes = c.data.classes;
    s.pad_layers = c.model.pad_layers;
    s.bn_mode = c.bn.mode;
    s.eps = static_cast<float>(c.bn.eps);
    s.slope = static_cast<float>(c.bn.slope);
    return s;
}

std::vector<float> pack_params(const ModelSpec& spec, const std::map<std::string, Tensor>& params) {
    std::vector<float> flat;
    flat.reserve(static_cast<size_t>(model_param_numel(spec)));
    for (const auto& [name, shape] : model_param_shapes(spec)) {
        auto it = params.find(name);
        if (it == params.end()) throw ContractError("missing parameter " + name);
        if (it->second.numel() != shape_numel(shape)) {
            throw ContractError("parameter " + name + " has unexpected size");
        }
        auto d = it->second.data();
        flat.insert(flat.end(), d.begin(), d.end());
    }
    return flat;
}

std::map<std::string, Tensor> unpack_params(const ModelSpec& spec, const std::vector<float>& flat) {
    std::map<std::string, Tensor> out;
    size_t at = 0;
    for (const auto& [name, shape] : model_param_shapes(spec)) {
        const size_t n = static_cast<size_t>(shape_numel(shape));
        if (at + n > flat.size()) throw ContractError("flat parameter vector too short");
        out.emplace(name, Tensor(shape, DType::F32,
                                 std::vector<float>(flat.begin() + static_cast<int64_t>(at),
                                                    flat.begin() + static_cast<int64_t>(at + n))));
        at += n;
    }
    if (at != flat.size()) throw ContractError("flat parameter vector has trailing data");
    return out;
}

namespace {

bool is_bn_param(const std::string& name) {
    return name.find("gamma") != std::string::npos || name.find("beta") != std::string::npos;
}

bool has_nonfinite(std::span<const float> v) {
    for (float x : v)
        if (!std::isfinite(x)) return true;
    return false;
}

// shared by the ring path and the parameter-server rule so both backends
// perform bit-identical updates; denom = loss_scale * K (powers of two)
void apply_sgd(std::span<float> w, std::span<float> v, std::span<const float> gsum, float lr,
               float momentum, double denom) {
    const float inv = static_cast<float>(1.0 / denom);
    for (size_t i = 0; i < w.size(); ++i) {
        const float g = gsum[i] * inv;
        v[i] = momentum * v[i] + g;
        w[i] -= lr * v[i];
    }
}

struct RankOut {
    std::string metrics;
    std::vector<double> losses;
    std::vector<uint64_t> digests;
    std::vector<float> weights, velocity;
    LossScaleState scale;
    std::vector<RunningStats> running;
    int64_t skipped = 0;
};

} // namespace

TrainResult run_training(const Config& c, const TrainOptions& opts) {
    c.validate();
    const ModelSpec spec = model_spec_from(c);
    const int K = c.comm.workers;
    const bool mixed = c.precision.mode == "mixed";
    const int64_t P = model_param_numel(spec);
    const uint64_t digest = config_digest(c);

    // initial state, either fresh or from a checkpoint
    std::vector<float> w0, v0(static_cast<size_t>(P), 0.0f);
    LossScaleState ls0;
    ls0.growth_interval = c.precision.growth_interval;
    ls0.growth_factor = c.precision.growth_factor;
    ls0.backoff_factor = c.precision.backoff_factor;
    ls0.min_scale = c.precision.min_scale;
    ls0.max_scale = c.precision.max_scale;
    if (mixed) {
        ls0.scale = c.precision.scale_init;
        ls0.mode = c.precision.scaling == "static" ? ScaleMode::Static : ScaleMode::Dynamic;
    } else {
        ls0.scale = 1.0;
        ls0.min_scale = 1.0;
        ls0.mode = ScaleMode::Static;
    }
    ls0.validate();
    std::vector<RunningStats> run0(2);
    for (auto& r : run0) r.momentum = static_cast<float>(c.bn.momentum);
    int64_t first_step = 1;

    if (!opts.resume_from.empty()) {
        CheckpointState st = load_checkpoint(opts.resume_from);
        if (st.config_digest != digest && !opts.force_resume) {
            throw ConfigError("checkpoint config digest mismatch (use --force to resume anyway)");
        }
        std::map<std::string, Tensor> loaded;
        for (auto& [name, t] : st.params) loaded.emplace(name, std::move(t));
        w0 = pack_params(spec, loaded);
        if (static_cast<int64_t>(st.velocity.size()) != P) {
            throw FormatError("checkpoint velocity length does not match the model");
        }
        v0 = st.velocity;
        ls0 = st.scale;
        if (st.running.size() == run0.size()) run0 = st.running;
        first_step = st.step + 1;
        if (first_step > c.train.steps) {
            throw ConfigError("checkpoint is already at step " + std::to_string(st.step) +
                              "; nothing to resume for train.steps=" + std::to_string(c.train.steps));
        }
    } else {
        w0 = pack_params(spec, init_model_params(spec, c.train.seed));
    }

    const Dataset ds = make_synthetic_dataset(c.train.seed, c.data.samples, c.data.channels,
                                              c.data.image, c.data.classes, c.data.noise);

    // cost model row echoed into the metrics (per-step model time)
    CostModel cm;
    cm.bandwidth = c.comm.bandwidth;
    cm.latency = c.comm.latency;
    cm.payload = static_cast<double>(P) * (mixed ? 2.0 : 4.0);
    cm.workers = K;
    cm.algorithm = c.comm.backend == "ps" ? CommAlgo::Ps : CommAlgo::Ring;
    cm.compute_seconds = c.comm.compute_seconds;
    cm.overlap = c.comm.overlap;
    const double step_time_model = simulate_step_time(cm).step_seconds;

    // analytically accounted static state: masters + velocity (+ shadows)
    int64_t static_bytes = 2 * P * 4;
    if (mixed) {
        for (const auto& [name, shape] : model_param_shapes(spec)) {
            if (!is_bn_param(name)) static_bytes += shape_numel(shape) * 2;
        }
    }

    auto transport = c.comm.transport == "socket" ? make_socket_transport(K) : make_inproc_transport(K);
    std::vector<RankOut> out(static_cast<size_t>(K));
    const auto t0 = std::chrono::steady_clock::now();

    run_workers(K, transport, [&](CommGroup& g) {
        const int rank = g.rank();
        RankOut& ro = out[static_cast<size_t>(rank)];
        std::vector<float> w = w0, v = v0;
        LossScaleState ls = ls0;
        std::vector<RunningStats> running = run0;
        MemoryTrace trace;
        MemoryTrace* tr = rank == 0 ? &trace : nullptr;
        const bool ps = c.comm.backend == "ps";
        if (ps) {
            const float lr = static_cast<float>(c.train.lr);
            const float mu = static_cast<float>(c.train.momentum);
            // executed on the server (rank 0); ls there tracks the live scale
            auto rule = [&ls, lr, mu, K](std::span<float> sw, std::span<float> sv,
                                         std::span<const float> gsum) {
                if (has_nonfinite(gsum)) return true;
                apply_sgd(sw, sv, gsum, lr, mu, ls.scale * K);
                return false;
            };
            g.ps_register("theta", P, w0, rule);
            if (rank == 0) {
                auto sv = g.ps_server_velocity_mut("theta");
                std::copy(v0.begin(), v0.end(), sv.begin());
            }
        }
        CheckpointPlan plan;
        if (c.memory.checkpoint) {
            const int64_t L = spec.pad_layers > 0 ? spec.pad_layers : kBaseLayers;
            plan = plan_checkpoints(L);
        }

        for (int64_t step = first_step; step <= c.train.steps; ++step) {
            trace.clear();
            const double grad_scale = mixed ? ls.scale : 1.0;

            // per-step weight views (FP16 shadows for conv/fc when mixed)
            std::map<std::string, Tensor> wmap = unpack_params(spec, w);
            if (mixed) {
                for (auto& [name, t] : wmap) {
                    if (!is_bn_param(name)) t = to_half(t);
                }
            }
            auto [batch, labels] =
                gather_batch(ds, c.train.seed, step, rank, K, c.train.batch_per_worker,
                             mixed ? DType::F16 : DType::F32);
            BnCapture cap;
            auto chain = build_model_chain(spec, wmap, std::move(labels), grad_scale, &g, &cap);
            ChainResult res = c.memory.checkpoint
                                  ? run_checkpointed_backward(chain, batch, plan, tr)
                                  : run_chain_backward(chain, batch, tr);

            std::vector<float> grads = pack_params(spec, res.param_grads);
            if (step == opts.inject_inf_step) grads[0] = std::numeric_limits<float>::infinity();

            std::vector<float> lbuf{res.loss};
            g.allreduce_sum(lbuf);
            const double loss = static_cast<double>(lbuf[0]) / K;

            bool overflow = false;
            if (ps) {
                g.ps_push("theta", grads);
                PullResult pr = g.ps_pull("theta");
                overflow = pr.overflow;
                w = std::move(pr.weights);
            } else {
                g.allreduce_sum(grads);
                overflow = has_nonfinite(grads);
                if (!overflow) apply_sgd(w, v, grads, static_cast<float>(c.train.lr),
                                         static_cast<float>(c.train.momentum), ls.scale * K);
            }
            const double scale_used = ls.scale;
            update_scale(ls, overflow);
            if (overflow) ++ro.skipped;
            update_running_stats(running[0], cap.bn1);
            update_running_stats(running[1], cap.bn2);

            if (rank == 0) {
                char row[192];
                std::snprintf(row, sizeof row, "%lld,%.9g,%.9g,%d,%.9g,%lld\n",
                              static_cast<long long>(step), loss, scale_used, overflow ? 1 : 0,
                              step_time_model, static_cast<long long>(trace.peak() + static_bytes));
                ro.metrics += row;
                ro.losses.push_back(loss);
                ro.digests.push_back(fnv1a(w.data(), w.size() * sizeof(float)));
            }
        }
        ro.scale = ls;
        ro.running = std::move(running);
        if (rank == 0) {
            ro.weights = std::move(w);
            if (ps) {
                auto sv = g.ps_server_velocity("theta");
                ro.velocity.assign(sv.begin(), sv.end());
            } else {
                ro.velocity = std::move(v);
            }
        }
    });

    const auto t1 = std::chrono::steady_clock::now();
    RankOut& r0 = out[0];
    TrainResult res;
    res.metrics_csv = "step,loss,scale,skipped,step_time_model,peak_bytes\n" + r0.metrics;
    res.losses = std::move(r0.losses);
    res.weight_digests = std::move(r0.digests);
    res.final_weights = std::move(r0.weights);
    res.skipped = r0.skipped;
    res.final_scale = r0.scale.scale;
    res.first_step = first_step;
    res.last_step = c.train.steps;
    res.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    if (opts.write_outputs) {
        namespace fs = std::filesystem;
        fs::create_directories(c.output.dir);
        const fs::path dir(c.output.dir);
        {
            std::ofstream f(dir / c.output.resolved, std::ios::binary);
            f << resolved_json(c);
        }
        res.metrics_path = (dir / c.output.metrics).string();
        {
            std::ofstream f(res.metrics_path, std::ios::binary);
            f << res.metrics_csv;
        }
        CheckpointState st;
        st.config_digest = digest;
        st.step = c.train.steps;
        for (auto& [name, t] : unpack_params(spec, res.final_weights)) st.params.emplace_back(name, std::move(t));
        st.velocity = r0.velocity;
        st.scale = r0.scale;
        st.running = r0.running;
        res.checkpoint_path = (dir / c.output.checkpoint).string();
        save_checkpoint(st, res.checkpoint_path);
    }
    return res;
}

} // namespace simdet
