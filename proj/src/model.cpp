// SPDX-License-Identifier: Apache-2.0
#include "simdet/model.hpp"

#include <cmath>
#include <memory>

namespace simdet {

namespace {

Tensor vec_tensor(const std::vector<float>& v) {
    return Tensor({static_cast<int64_t>(v.size())}, DType::F32, v);
}

// plain/sync batch norm as a tape op; x and gamma are retained, backward
// re-reduces across the group when one is attached
std::shared_ptr<CustomOp> make_bn_op(const std::string& name, float eps, CommGroup* group,
                                     BNStats* capture) {
    auto op = std::make_shared<CustomOp>();
    op->name = name;
    op->saved_inputs = {0, 1};
    op->forward = [eps, group, capture](const std::vector<const Tensor*>& in,
                                        std::vector<Tensor>& stash) {
        auto [y, stats] = syncbn_forward(*in[0], in[1]->data(), in[2]->data(), eps, group);
        stash.push_back(vec_tensor(stats.mean));
        stash.push_back(vec_tensor(stats.invstd));
        stash.push_back(Tensor::scalar(static_cast<float>(stats.count)));
        if (capture) *capture = stats;
        return std::move(y);
    };
    op->backward = [group](const Tensor& dy, const std::vector<const Tensor*>& in, const Tensor*,
                           const std::vector<Tensor>& stash) {
        BNStats stats;
        stats.mean.assign(stash[0].data().begin(), stash[0].data().end());
        stats.invstd.assign(stash[1].data().begin(), stash[1].data().end());
        stats.count = static_cast<int64_t>(stash[2][0]);
        BnGrads g = syncbn_backward(dy, *in[0], stats, in[1]->data(), group);
        std::vector<Tensor> out;
        out.push_back(std::move(g.dx));
        out.push_back(vec_tensor(g.dgamma));
        out.push_back(vec_tensor(g.dbeta));
        return out;
    };
    return op;
}

// fused BN + leaky relu keeping only the output; x is reconstructed in
// backward by inverting the activation
std::shared_ptr<CustomOp> make_iabn_op(const std::string& name, float eps, float slope,
                                       BNStats* capture) {
    auto op = std::make_shared<CustomOp>();
    op->name = name;
    op->saved_inputs = {1, 2};
    op->save_output = true;
    op->forward = [eps, slope, capture](const std::vector<const Tensor*>& in,
                                        std::vector<Tensor>& stash) {
        auto [y, saved] = iabn_forward(*in[0], in[1]->data(), in[2]->data(), eps, slope);
        stash.push_back(vec_tensor(saved.mean));
        stash.push_back(vec_tensor(saved.invstd));
        if (capture) {
            const Shape& s = in[0]->shape();
            const int64_t m = s[0] * s[2] * s[3];
            capture->count = m;
            capture->mean = saved.mean;
            capture->invstd = saved.invstd;
            capture->sum.resize(saved.mean.size());
            capture->sumsq.resize(saved.mean.size());
            for (size_t c = 0; c < saved.mean.size(); ++c) {
                const double mean = saved.mean[c];
                const double var =
                    std::max(0.0, 1.0 / (static_cast<double>(saved.invstd[c]) * saved.invstd[c]) - eps);
                capture->sum[c] = static_cast<float>(mean * m);
                capture->sumsq[c] = static_cast<float>((var + mean * mean) * m);
            }
        }
        return std::move(y);
    };
    op->backward = [eps, slope](const Tensor& dy, const std::vector<const Tensor*>& in,
                                const Tensor* out, const std::vector<Tensor>& stash) {
        IabnSaved saved;
        saved.y = *out;
        saved.mean.assign(stash[0].data().begin(), stash[0].data().end());
        saved.invstd.assign(stash[1].data().begin(), stash[1].data().end());
        saved.gamma.assign(in[1]->data().begin(), in[1]->data().end());
        saved.beta.assign(in[2]->data().begin(), in[2]->data().end());
        saved.eps = eps;
        saved.slope = slope;
        IabnGrads g = iabn_backward(dy, saved);
        std::vector<Tensor> res;
        res.push_back(std::move(g.dx));
        res.push_back(vec_tensor(g.dgamma));
        res.push_back(vec_tensor(g.dbeta));
        return res;
    };
    return op;
}

// softmax cross-entropy against fixed labels, mean over the batch; the
// loss-scale factor is folded into backward so the forward value stays
// the true loss
std::shared_ptr<CustomOp> make_ce_op(std::vector<int> labels, double grad_scale) {
    auto op = std::make_shared<CustomOp>();
    op->name = "softmax_ce";
    op->output_tag = "loss";
    auto lab = std::make_shared<std::vector<int>>(std::move(labels));
    op->forward = [lab](const std::vector<const Tensor*>& in, std::vector<Tensor>& stash) {
        const Tensor& logits = *in[0];
        if (logits.shape().size() != 2) throw ShapeError("cross-entropy expects [batch, classes] logits");
        const int64_t B = logits.shape()[0], C = logits.shape()[1];
        if (static_cast<int64_t>(lab->size()) != B) {
            throw ContractError("cross-entropy label count does not match batch");
        }
        Tensor probs({B, C}, DType::F32, 0.0f);
        auto ld = logits.data();
        auto pd = probs.data();
        double loss = 0.0;
        for (int64_t i = 0; i < B; ++i) {
            double mx = ld[i * C];
            for (int64_t j = 1; j < C; ++j) mx = std::max(mx, static_cast<double>(ld[i * C + j]));
            double z = 0.0;
            for (int64_t j = 0; j < C; ++j) z += std::exp(static_cast<double>(ld[i * C + j]) - mx);
            const int y = (*lab)[static_cast<size_t>(i)];
            if (y < 0 || y >= C) throw ContractError("label outside class range");
            for (int64_t j = 0; j < C; ++j) {
                pd[i * C + j] = static_cast<float>(std::exp(static_cast<double>(ld[i * C + j]) - mx) / z);
            }
            loss -= std::log(std::max(1e-30, static_cast<double>(pd[i * C + y])));
        }
        stash.push_back(std::move(probs));
        return Tensor::scalar(static_cast<float>(loss / static_cast<double>(B)));
    };
    op->backward = [lab, grad_scale](const Tensor& dy, const std::vector<const Tensor*>&,
                                     const Tensor*, const std::vector<Tensor>& stash) {
        const Tensor& probs = stash[0];
        const int64_t B = probs.shape()[0], C = probs.shape()[1];
        Tensor dx({B, C}, DType::F32, 0.0f);
        auto pd = probs.data();
        auto dd = dx.data();
        const float g = static_cast<float>(static_cast<double>(dy[0]) * grad_scale / static_cast<double>(B));
        for (int64_t i = 0; i < B; ++i) {
            const int y = (*lab)[static_cast<size_t>(i)];
            for (int64_t j = 0; j < C; ++j) {
                dd[i * C + j] = (pd[i * C + j] - (j == y ? 1.0f : 0.0f)) * g;
            }
        }
        std::vector<Tensor> out;
        out.push_back(std::move(dx));
        return out;
    };
    return op;
}

} // namespace

std::vector<std::pair<std::string, Shape>> model_param_shapes(const ModelSpec& spec) {
    const int64_t C = spec.channels, img = spec.image, H = spec.hidden, cls = spec.classes;
    return {
        {"conv1.w", {8, C, 3, 3}},
        {"bn1.gamma", {8}},
        {"bn1.beta", {8}},
        {"conv2.w", {16, 8, 3, 3}},
        {"bn2.gamma", {16}},
        {"bn2.beta", {16}},
        {"fc1.w", {16 * img * img, H}},
        {"fc2.w", {H, cls}},
    };
}

int64_t model_param_numel(const ModelSpec& spec) {
    int64_t n = 0;
    for (const auto& [name, shape] : model_param_shapes(spec)) n += shape_numel(shape);
    return n;
}

std::map<std::string, Tensor> init_model_params(const ModelSpec& spec, uint64_t seed) {
    std::map<std::string, Tensor> out;
    uint64_t i = 0;
    for (const auto& [name, shape] : model_param_shapes(spec)) {
        ++i;
        if (name.find("gamma") != std::string::npos) {
            out.emplace(name, Tensor(shape, DType::F32, 1.0f));
        } else if (name.find("beta") != std::string::npos) {
            out.emplace(name, Tensor(shape, DType::F32, 0.0f));
        } else {
            // uniform fan-in init
            int64_t fan = 1;
            for (size_t d = shape.size() == 4 ? 1 : 0; d < shape.size() - (shape.size() == 2 ? 1 : 0); ++d)
                fan *= shape[d];
            if (shape.size() == 2) fan = shape[0];
            const float s = static_cast<float>(std::sqrt(1.0 / static_cast<double>(fan)));
            out.emplace(name, Tensor::uniform(shape, DType::F32, seed * 0x9e37ull + i * 0x85ebull, -s, s));
        }
    }
    return out;
}

std::vector<ChainLayer> build_model_chain(const ModelSpec& spec,
                                          const std::map<std::string, Tensor>& weights,
                                          std::vector<int> labels, double grad_scale,
                                          CommGroup* group, BnCapture* capture) {
    if (spec.pad_layers != 0 && spec.pad_layers < kBaseLayers) {
        throw ContractError("pad_layers must be 0 or >= " + std::to_string(kBaseLayers));
    }
    CommGroup* bn_group = (spec.bn_mode == "sync") ? group : nullptr;
    const auto* w = &weights;
    std::vector<ChainLayer> chain;

    chain.push_back({"conv1", [w](Tape& t, ValueId x, ParamBinder& pb) {
                         return t.conv2d(x, pb.bind("conv1.w", w->at("conv1.w")), 1, 1);
                     }});

    if (spec.bn_mode == "iabn") {
        auto op = make_iabn_op("iabn1", spec.eps, spec.slope, capture ? &capture->bn1 : nullptr);
        chain.push_back({"bn1", [w, op](Tape& t, ValueId x, ParamBinder& pb) {
                             return t.custom(op, {x, pb.bind("bn1.gamma", w->at("bn1.gamma")),
                                                  pb.bind("bn1.beta", w->at("bn1.beta"))});
                         }});
    } else {
        auto op = make_bn_op("bn1", spec.eps, bn_group, capture ? &capture->bn1 : nullptr);
        const float slope = spec.slope;
        chain.push_back({"bn1", [w, op, slope](Tape& t, ValueId x, ParamBinder& pb) {
                             ValueId y = t.custom(op, {x, pb.bind("bn1.gamma", w->at("bn1.gamma")),
                                                       pb.bind("bn1.beta", w->at("bn1.beta"))});
                             return t.leaky_relu(y, slope);
                         }});
    }

    const int pads = spec.pad_layers > 0 ? spec.pad_layers - kBaseLayers : 0;
    for (int p = 0; p < pads; ++p) {
        chain.push_back({"pad" + std::to_string(p), [](Tape& t, ValueId x, ParamBinder&) {
                             return t.leaky_relu(x, 1.0f); // identity, keeps the layer differentiable
                         }});
    }

    chain.push_back({"conv2", [w](Tape& t, ValueId x, ParamBinder& pb) {
                         return t.conv2d(x, pb.bind("conv2.w", w->at("conv2.w")), 1, 1);
                     }});
    {
        auto op = make_bn_op("bn2", spec.eps, bn_group, capture ? &capture->bn2 : nullptr);
        chain.push_back({"bn2", [w, op](Tape& t, ValueId x, ParamBinder& pb) {
                             ValueId y = t.custom(op, {x, pb.bind("bn2.gamma", w->at("bn2.gamma")),
                                                       pb.bind("bn2.beta", w->at("bn2.beta"))});
                             return t.relu(y);
                         }});
    }
    const int64_t flat = 16 * spec.image * spec.image;
    chain.push_back({"flatten", [flat](Tape& t, ValueId x, ParamBinder&) {
                         return t.reshape(x, {t.value(x).shape()[0], flat});
                     }});
    chain.push_back({"fc1", [w](Tape& t, ValueId x, ParamBinder& pb) {
                         return t.matmul(x, pb.bind("fc1.w", w->at("fc1.w")));
                     }});
    chain.push_back({"relu3", [](Tape& t, ValueId x, ParamBinder&) { return t.relu(x); }});
    chain.push_back({"fc2", [w](Tape& t, ValueId x, ParamBinder& pb) {
                         return t.matmul(x, pb.bind("fc2.w", w->at("fc2.w")));
                     }});
    {
        auto op = make_ce_op(std::move(labels), grad_scale);
        chain.push_back({"loss", [op](Tape& t, ValueId x, ParamBinder&) { return t.custom(op, {x}); }});
    }
    return chain;
}

} // namespace simdet
