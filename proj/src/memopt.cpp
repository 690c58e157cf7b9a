// SPDX-License-Identifier: Apache-2.0
#include "simdet/memopt.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace simdet {

// ---- MemoryTrace ----

void MemoryTrace::on_alloc(int64_t bytes, const std::string& tag) {
    if (bytes < 0) throw TraceError("alloc with negative byte count");
    running_ += bytes;
    peak_ = std::max(peak_, running_);
    auto& [trun, tpeak] = by_tag_[tag];
    trun += bytes;
    tpeak = std::max(tpeak, trun);
    events_.push_back({true, bytes, tag, running_});
}

void MemoryTrace::on_free(int64_t bytes, const std::string& tag) {
    if (bytes < 0) throw TraceError("free with negative byte count");
    auto it = by_tag_.find(tag);
    if (it == by_tag_.end() || it->second.first < bytes || running_ < bytes) {
        throw TraceError("free of " + std::to_string(bytes) + " bytes (tag " + tag + ") without matching alloc");
    }
    it->second.first -= bytes;
    running_ -= bytes;
    events_.push_back({false, bytes, tag, running_});
}

int64_t MemoryTrace::peak_for_tag(const std::string& tag) const {
    auto it = by_tag_.find(tag);
    return it == by_tag_.end() ? 0 : it->second.second;
}

int64_t MemoryTrace::running_for_tag(const std::string& tag) const {
    auto it = by_tag_.find(tag);
    return it == by_tag_.end() ? 0 : it->second.first;
}

void MemoryTrace::clear() {
    events_.clear();
    by_tag_.clear();
    running_ = peak_ = 0;
}

void MemoryTrace::reset_peak() {
    peak_ = running_;
    for (auto& [tag, rp] : by_tag_) rp.second = rp.first;
}

void MemoryTrace::write_csv(std::ostream& os) const {
    os << "event,bytes,tag,running,peak\n";
    int64_t pk = 0;
    for (const auto& e : events_) {
        pk = std::max(pk, e.running);
        os << (e.alloc ? "alloc" : "free") << ',' << e.bytes << ',' << e.tag << ',' << e.running << ',' << pk
           << '\n';
    }
}

int64_t peak_memory(const std::vector<MemoryTrace::Event>& events) {
    int64_t running = 0, peak = 0;
    for (const auto& e : events) {
        running += e.alloc ? e.bytes : -e.bytes;
        if (running < 0) throw TraceError("free without matching alloc in event stream");
        peak = std::max(peak, running);
    }
    return peak;
}

// ---- checkpoint planning ----

CheckpointPlan plan_checkpoints(int64_t layers) {
    if (layers < 1) throw PlanError("layer count must be >= 1");
    const int64_t segs = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(layers))));
    const int64_t base = layers / segs, rem = layers % segs;
    CheckpointPlan plan;
    plan.layers = layers;
    int64_t at = 0;
    for (int64_t j = 0; j + 1 < segs; ++j) {
        at += base + (j < rem ? 1 : 0);
        plan.boundaries.push_back(at);
    }
    return plan;
}

CheckpointPlan plan_checkpoints(int64_t layers, std::vector<int64_t> boundaries) {
    if (layers < 1) throw PlanError("layer count must be >= 1");
    int64_t prev = 0;
    for (int64_t b : boundaries) {
        if (b <= prev || b >= layers) {
            throw PlanError("boundary " + std::to_string(b) + " out of range or unsorted for " +
                            std::to_string(layers) + " layers");
        }
        prev = b;
    }
    return {layers, std::move(boundaries)};
}

// ---- chain runners ----

ValueId ParamBinder::bind(const std::string& name, const Tensor& value) {
    auto it = ids_.find(name);
    if (it != ids_.end()) return it->second;
    ValueId id = tape_->leaf(value, true, false, "param");
    ids_.emplace(name, id);
    return id;
}

namespace {

ValueId record_segment(Tape& tape, ValueId start, std::span<const ChainLayer> chain, int64_t begin,
                      int64_t end, ParamBinder& pb) {
    ValueId v = start;
    for (int64_t i = begin; i < end; ++i) {
        ValueId nv = chain[static_cast<size_t>(i)].apply(tape, v, pb);
        if (v != start) tape.release(v);
        v = nv;
    }
    return v;
}

void collect_param_grads(const ParamBinder& pb, const GradMap& g, std::map<std::string, Tensor>& out) {
    for (const auto& [name, id] : pb.bound()) {
        auto it = g.find(id);
        if (it == g.end()) continue;
        auto slot = out.find(name);
        if (slot == out.end()) {
            out.emplace(name, it->second);
        } else {
            auto d = slot->second.data();
            auto c = it->second.data();
            for (size_t i = 0; i < d.size(); ++i) d[i] += c[i];
        }
    }
}

} // namespace

ChainResult run_chain_backward(std::span<const ChainLayer> chain, const Tensor& input, MemoryTrace* trace) {
    if (chain.empty()) throw ContractError("empty layer chain");
    Tape tape(trace);
    ValueId x = tape.leaf(input, true, false, "input");
    ParamBinder pb(tape);
    ValueId out = record_segment(tape, x, chain, 0, static_cast<int64_t>(chain.size()), pb);
    ChainResult res;
    res.loss = tape.value(out)[0];
    GradMap g = tape.backward(out, true);
    res.input_grad = g.at(x);
    collect_param_grads(pb, g, res.param_grads);
    return res;
}

ChainResult run_checkpointed_backward(std::span<const ChainLayer> chain, const Tensor& input,
                                      const CheckpointPlan& plan, MemoryTrace* trace) {
    const int64_t L = static_cast<int64_t>(chain.size());
    if (L == 0) throw ContractError("empty layer chain");
    if (plan.layers != L) throw PlanError("plan covers " + std::to_string(plan.layers) + " layers, chain has " +
                                          std::to_string(L));
    std::vector<int64_t> starts{0};
    for (int64_t b : plan.boundaries) starts.push_back(b);
    starts.push_back(L);
    const int64_t S = static_cast<int64_t>(starts.size()) - 1;

    // forward: keep only segment boundary outputs
    std::vector<Tensor> seg_input(static_cast<size_t>(S));
    seg_input[0] = input;
    for (int64_t j = 0; j < S; ++j) {
        Tape tape(trace);
        ValueId x = tape.leaf(seg_input[static_cast<size_t>(j)], false, false, "boundary");
        ParamBinder pb(tape);
        ValueId out = record_segment(tape, x, chain, starts[static_cast<size_t>(j)],
                                     starts[static_cast<size_t>(j) + 1], pb);
        if (j + 1 < S) {
            seg_input[static_cast<size_t>(j) + 1] = tape.take(out);
        } else {
            // final output is the scalar loss; drop it, backward recomputes it
            tape.release(out);
        }
    }

    // backward: re-record each segment from its boundary input
    ChainResult res;
    Tensor upstream;
    for (int64_t j = S - 1; j >= 0; --j) {
        Tape tape(trace);
        ValueId x = tape.leaf(seg_input[static_cast<size_t>(j)], true, false, "boundary");
        ParamBinder pb(tape);
        ValueId out = record_segment(tape, x, chain, starts[static_cast<size_t>(j)],
                                     starts[static_cast<size_t>(j) + 1], pb);
        GradMap g;
        if (j == S - 1) {
            res.loss = tape.value(out)[0];
            g = tape.backward(out, true);
        } else {
            g = tape.backward_from(out, upstream, true);
        }
        collect_param_grads(pb, g, res.param_grads);
        upstream = g.at(x);
        if (j > 0) {
            if (trace) trace->on_free(seg_input[static_cast<size_t>(j)].bytes(), "act");
            seg_input[static_cast<size_t>(j)] = Tensor();
        }
    }
    res.input_grad = std::move(upstream);
    return res;
}

// ---- IABN ----

namespace {

void check_bn_params(const Shape& xs, size_t gamma_n, size_t beta_n) {
    if (xs.size() != 4) throw ShapeError("batch norm expects a rank-4 input, got " + shape_str(xs));
    const size_t c = static_cast<size_t>(xs[1]);
    if (gamma_n != c || beta_n != c) {
        throw ShapeError("batch norm parameter length does not match channel count " + std::to_string(c));
    }
}

} // namespace

std::pair<Tensor, IabnSaved> iabn_forward(const Tensor& x, std::span<const float> gamma,
                                          std::span<const float> beta, float eps, float slope) {
    check_bn_params(x.shape(), gamma.size(), beta.size());
    if (slope <= 0.0f) throw NonInvertibleError("iabn requires a strictly positive leaky slope");
    for (float g : gamma) {
        if (g == 0.0f) throw NonInvertibleError("iabn requires gamma != 0 in every channel");
    }
    const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t m = N * H * W;
    if (m < 2) throw DegenerateBatchError("batch norm needs at least 2 values per channel");

    IabnSaved saved;
    saved.eps = eps;
    saved.slope = slope;
    saved.gamma.assign(gamma.begin(), gamma.end());
    saved.beta.assign(beta.begin(), beta.end());
    saved.mean.resize(static_cast<size_t>(C));
    saved.invstd.resize(static_cast<size_t>(C));

    auto xd = x.data();
    const int64_t hw = H * W;
    for (int64_t c = 0; c < C; ++c) {
        double sum = 0.0, sumsq = 0.0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < hw; ++i) {
                const double v = xd[(n * C + c) * hw + i];
                sum += v;
                sumsq += v * v;
            }
        const double mean = sum / static_cast<double>(m);
        const double var = std::max(0.0, sumsq / static_cast<double>(m) - mean * mean);
        saved.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
        saved.invstd[static_cast<size_t>(c)] = static_cast<float>(1.0 / std::sqrt(var + eps));
    }

    Tensor y(x.shape(), x.dtype(), 0.0f);
    auto yd = y.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t at = (n * C + c) * hw + i;
                const float z = gamma[static_cast<size_t>(c)] *
                                    (xd[at] - saved.mean[static_cast<size_t>(c)]) *
                                    saved.invstd[static_cast<size_t>(c)] +
                                beta[static_cast<size_t>(c)];
                yd[at] = z > 0.0f ? z : slope * z;
            }
    y.quantize();
    saved.y = y;
    return {std::move(y), std::move(saved)};
}

IabnGrads iabn_backward(const Tensor& dy, const IabnSaved& saved) {
    if (!saved.y.defined() || saved.mean.empty()) throw ContractError("iabn backward without saved state");
    if (dy.shape() != saved.y.shape()) throw ShapeError("iabn backward: dy shape mismatch");
    const Tensor& y = saved.y;
    const int64_t N = y.shape()[0], C = y.shape()[1], hw = y.shape()[2] * y.shape()[3];
    const int64_t m = N * hw;

    IabnGrads out;
    out.dx = Tensor(y.shape(), DType::F32, 0.0f);
    out.dgamma.assign(static_cast<size_t>(C), 0.0f);
    out.dbeta.assign(static_cast<size_t>(C), 0.0f);

    auto yd = y.data();
    auto gd = dy.data();
    auto dxd = out.dx.data();
    std::vector<double> s1(static_cast<size_t>(C), 0.0), s2(static_cast<size_t>(C), 0.0);
    // reconstruct z = lrelu^-1(y), then xhat = (z - beta) / gamma
    auto zhat = [&](int64_t at, int64_t c, float& dz) {
        const float yv = yd[at];
        const float z = yv >= 0.0f ? yv : yv / saved.slope;
        dz = gd[at] * (yv > 0.0f ? 1.0f : saved.slope);
        return (z - saved.beta[static_cast<size_t>(c)]) / saved.gamma[static_cast<size_t>(c)];
    };
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t at = (n * C + c) * hw + i;
                float dz;
                const float xh = zhat(at, c, dz);
                s1[static_cast<size_t>(c)] += dz;
                s2[static_cast<size_t>(c)] += static_cast<double>(dz) * xh;
            }
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const float mean_dz = static_cast<float>(s1[static_cast<size_t>(c)] / static_cast<double>(m));
            const float mean_dzxh = static_cast<float>(s2[static_cast<size_t>(c)] / static_cast<double>(m));
            const float gis = saved.gamma[static_cast<size_t>(c)] * saved.invstd[static_cast<size_t>(c)];
            for (int64_t i = 0; i < hw; ++i) {
                const int64_t at = (n * C + c) * hw + i;
                float dz;
                const float xh = zhat(at, c, dz);
                dxd[at] = gis * (dz - mean_dz - xh * mean_dzxh);
            }
        }
    for (int64_t c = 0; c < C; ++c) {
        out.dgamma[static_cast<size_t>(c)] = static_cast<float>(s2[static_cast<size_t>(c)]);
        out.dbeta[static_cast<size_t>(c)] = static_cast<float>(s1[static_cast<size_t>(c)]);
    }
    return out;
}

} // namespace simdet
