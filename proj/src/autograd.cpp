// SPDX-License-Identifier: Apache-2.0
#include "simdet/autograd.hpp"

#include <algorithm>
#include <cmath>

namespace simdet {

namespace {

// output flat index for every input flat index of a reduction
int64_t reduce_out_index(const Shape& s, const std::vector<bool>& red, int64_t flat) {
    const int rank = static_cast<int>(s.size());
    // strides of kept axes in the output
    int64_t oflat = 0, ostride = 1, rem = flat;
    // walk from the innermost axis outward
    std::vector<int64_t> ix(static_cast<size_t>(rank));
    for (int i = rank - 1; i >= 0; --i) {
        ix[static_cast<size_t>(i)] = rem % s[static_cast<size_t>(i)];
        rem /= s[static_cast<size_t>(i)];
    }
    for (int i = rank - 1; i >= 0; --i) {
        if (!red[static_cast<size_t>(i)]) {
            oflat += ix[static_cast<size_t>(i)] * ostride;
            ostride *= s[static_cast<size_t>(i)];
        }
    }
    return oflat;
}

std::vector<bool> reduce_mask(const Shape& s, const std::vector<int>& axes) {
    std::vector<bool> red(s.size(), false);
    for (int ax : axes) red[static_cast<size_t>(ax)] = true;
    if (axes.empty()) red.assign(s.size(), true);
    return red;
}

} // namespace

Tape::Tape(MemoryTrace* trace) : trace_(trace) {}

Tape::~Tape() {
    for (size_t i = 0; i < values_.size(); ++i) {
        Value& v = values_[i];
        if (!v.freed && v.metered && trace_) trace_->on_free(v.t.bytes(), v.tag);
    }
    if (trace_) {
        for (auto& n : nodes_) {
            if (n.stash_bytes > 0) trace_->on_free(n.stash_bytes, n.op ? n.op->stash_tag : "stat");
        }
    }
}

void Tape::check_id(ValueId v) const {
    if (v < 0 || v >= static_cast<ValueId>(values_.size())) {
        throw GraphError("unknown value id " + std::to_string(v));
    }
}

const Tensor& Tape::val(ValueId v) const {
    check_id(v);
    if (values_[static_cast<size_t>(v)].freed) {
        throw GraphError("value " + std::to_string(v) + " already released");
    }
    return values_[static_cast<size_t>(v)].t;
}

const Tensor& Tape::value(ValueId v) const { return val(v); }

ValueId Tape::new_value(Tensor t, bool metered, const std::string& tag) {
    if (metered && trace_) trace_->on_alloc(t.bytes(), tag);
    Value v;
    v.shape = t.shape();
    v.dtype = t.dtype();
    v.t = std::move(t);
    v.metered = metered;
    v.tag = tag;
    values_.push_back(std::move(v));
    return static_cast<ValueId>(values_.size() - 1);
}

void Tape::save_ref(ValueId v) { values_[static_cast<size_t>(v)].save_refs++; }

void Tape::unsave_ref(ValueId v) {
    values_[static_cast<size_t>(v)].save_refs--;
    maybe_free(v);
}

void Tape::maybe_free(ValueId v) {
    Value& val = values_[static_cast<size_t>(v)];
    if (!val.freed && !val.existence && val.save_refs <= 0) {
        if (val.metered && trace_) trace_->on_free(val.t.bytes(), val.tag);
        val.t = Tensor();
        val.freed = true;
    }
}

ValueId Tape::leaf(Tensor t, bool requires_grad, bool metered, const std::string& tag) {
    ValueId id = new_value(std::move(t), metered, tag);
    values_[static_cast<size_t>(id)].is_leaf = true;
    values_[static_cast<size_t>(id)].requires_grad = requires_grad;
    return id;
}

ValueId Tape::record(OpKind kind, std::vector<ValueId> inputs, Tensor out, Node extra) {
    for (ValueId v : inputs) (void)val(v);
    const std::string& tag = (kind == OpKind::Custom && extra.op) ? extra.op->output_tag : "act";
    ValueId oid = new_value(std::move(out), true, tag);
    Node n = std::move(extra);
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.output = oid;
    // retain what backward needs
    switch (kind) {
        case OpKind::MatMul:
        case OpKind::Conv2d:
        case OpKind::Mul:
            save_ref(n.inputs[0]);
            save_ref(n.inputs[1]);
            break;
        case OpKind::Relu:
        case OpKind::LeakyRelu:
            save_ref(n.inputs[0]);
            break;
        case OpKind::Exp:
            save_ref(oid);
            break;
        case OpKind::ReduceMax:
            save_ref(n.inputs[0]);
            save_ref(oid);
            break;
        case OpKind::Custom:
            for (size_t slot : n.op->saved_inputs) save_ref(n.inputs[slot]);
            if (n.op->save_output) save_ref(oid);
            break;
        default:
            break;
    }
    if (trace_ && !n.stash.empty()) {
        for (const auto& t : n.stash) n.stash_bytes += t.bytes();
        trace_->on_alloc(n.stash_bytes, n.op ? n.op->stash_tag : "stat");
    }
    nodes_.push_back(std::move(n));
    return oid;
}

ValueId Tape::matmul(ValueId a, ValueId b) { return record(OpKind::MatMul, {a, b}, simdet::matmul(val(a), val(b)), Node()); }

ValueId Tape::conv2d(ValueId x, ValueId k, int stride, int pad) {
    Node e;
    e.stride = stride;
    e.pad = pad;
    return record(OpKind::Conv2d, {x, k}, simdet::conv2d(val(x), val(k), stride, pad), std::move(e));
}

ValueId Tape::add(ValueId a, ValueId b) { return record(OpKind::Add, {a, b}, simdet::add(val(a), val(b)), Node()); }
ValueId Tape::sub(ValueId a, ValueId b) { return record(OpKind::Sub, {a, b}, simdet::sub(val(a), val(b)), Node()); }
ValueId Tape::mul(ValueId a, ValueId b) { return record(OpKind::Mul, {a, b}, simdet::mul(val(a), val(b)), Node()); }
ValueId Tape::relu(ValueId a) { return record(OpKind::Relu, {a}, simdet::relu(val(a)), Node()); }

ValueId Tape::leaky_relu(ValueId a, float slope) {
    Node e;
    e.scalar = slope;
    return record(OpKind::LeakyRelu, {a}, simdet::leaky_relu(val(a), slope), std::move(e));
}

ValueId Tape::exp_(ValueId a) { return record(OpKind::Exp, {a}, simdet::exp(val(a)), Node()); }

ValueId Tape::scale(ValueId a, float s) {
    Node e;
    e.scalar = s;
    return record(OpKind::Scale, {a}, simdet::scale(val(a), s), std::move(e));
}

ValueId Tape::reduce_sum(ValueId a, const std::vector<int>& axes) {
    Node e;
    e.axes = axes;
    e.prev_shape = val(a).shape();
    return record(OpKind::ReduceSum, {a}, simdet::reduce(ReduceKind::Sum, val(a), axes), std::move(e));
}

ValueId Tape::reduce_mean(ValueId a, const std::vector<int>& axes) {
    Node e;
    e.axes = axes;
    e.prev_shape = val(a).shape();
    return record(OpKind::ReduceMean, {a}, simdet::reduce(ReduceKind::Mean, val(a), axes), std::move(e));
}

ValueId Tape::reduce_max(ValueId a, const std::vector<int>& axes) {
    Node e;
    e.axes = axes;
    e.prev_shape = val(a).shape();
    return record(OpKind::ReduceMax, {a}, simdet::reduce(ReduceKind::Max, val(a), axes), std::move(e));
}

ValueId Tape::reshape(ValueId a, Shape shape) {
    const Tensor& t = val(a);
    validate_shape(shape);
    if (shape_numel(shape) != t.numel()) {
        throw ShapeError("reshape: numel mismatch " + shape_str(t.shape()) + " -> " + shape_str(shape));
    }
    Node e;
    e.prev_shape = t.shape();
    std::vector<float> d(t.data().begin(), t.data().end());
    return record(OpKind::Reshape, {a}, Tensor(shape, t.dtype(), std::move(d)), std::move(e));
}

ValueId Tape::custom(std::shared_ptr<const CustomOp> op, std::vector<ValueId> inputs) {
    std::vector<const Tensor*> in;
    in.reserve(inputs.size());
    for (ValueId v : inputs) in.push_back(&val(v));
    Node e;
    e.op = op;
    Tensor out = op->forward(in, e.stash);
    return record(OpKind::Custom, std::move(inputs), std::move(out), std::move(e));
}

Tensor Tape::take(ValueId v) {
    (void)val(v);
    Value& entry = values_[static_cast<size_t>(v)];
    entry.metered = false; // trace ownership moves with the tensor
    if (entry.save_refs > 0) return entry.t;
    Tensor t = std::move(entry.t);
    entry.existence = false;
    entry.freed = true;
    return t;
}

void Tape::release(ValueId v) {
    check_id(v);
    Value& entry = values_[static_cast<size_t>(v)];
    if (!entry.existence) return;
    entry.existence = false;
    maybe_free(v);
}

GradMap Tape::backward(ValueId loss, bool release_saved) {
    if (!val(loss).is_scalar()) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(val(loss).shape()));
    }
    return run_backward(loss, Tensor::scalar(1.0f), release_saved);
}

GradMap Tape::backward_from(ValueId out, const Tensor& seed, bool release_saved) {
    if (seed.shape() != val(out).shape()) {
        throw ContractError("backward_from: seed shape mismatch");
    }
    return run_backward(out, seed, release_saved);
}

namespace {

void add_into(std::map<ValueId, Tensor>& acc, ValueId v, Tensor contrib) {
    auto it = acc.find(v);
    if (it == acc.end()) {
        acc.emplace(v, std::move(contrib));
        return;
    }
    auto d = it->second.data();
    auto c = contrib.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] += c[i];
}

} // namespace

void Tape::node_backward(const Node& n, const Tensor& dy, std::map<ValueId, Tensor>& acc) {
    auto input = [&](size_t i) -> const Tensor& { return values_[static_cast<size_t>(n.inputs[i])].t; };
    switch (n.kind) {
        case OpKind::MatMul: {
            const Tensor &a = input(0), &b = input(1);
            const int64_t m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
            std::vector<float> da(static_cast<size_t>(m * k), 0.0f), db(static_cast<size_t>(k * nn), 0.0f);
            auto ad = a.data(), bd = b.data(), gd = dy.data();
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    float accu = 0.0f;
                    for (int64_t j = 0; j < nn; ++j) accu += gd[i * nn + j] * bd[p * nn + j];
                    da[static_cast<size_t>(i * k + p)] = accu;
                }
            for (int64_t p = 0; p < k; ++p)
                for (int64_t j = 0; j < nn; ++j) {
                    float accu = 0.0f;
                    for (int64_t i = 0; i < m; ++i) accu += ad[i * k + p] * gd[i * nn + j];
                    db[static_cast<size_t>(p * nn + j)] = accu;
                }
            add_into(acc, n.inputs[0], Tensor({m, k}, DType::F32, std::move(da)));
            add_into(acc, n.inputs[1], Tensor({k, nn}, DType::F32, std::move(db)));
            break;
        }
        case OpKind::Conv2d: {
            const Tensor &x = input(0), &k = input(1);
            const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
            const int64_t O = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
            const int64_t Ho = dy.shape()[2], Wo = dy.shape()[3];
            std::vector<float> dx(static_cast<size_t>(x.numel()), 0.0f), dk(static_cast<size_t>(k.numel()), 0.0f);
            auto xd = x.data(), kd = k.data(), gd = dy.data();
            for (int64_t nn = 0; nn < N; ++nn)
                for (int64_t o = 0; o < O; ++o)
                    for (int64_t oh = 0; oh < Ho; ++oh)
                        for (int64_t ow = 0; ow < Wo; ++ow) {
                            const float g = gd[((nn * O + o) * Ho + oh) * Wo + ow];
                            if (g == 0.0f) continue;
                            for (int64_t c = 0; c < C; ++c)
                                for (int64_t r = 0; r < kh; ++r) {
                                    const int64_t ih = oh * n.stride - n.pad + r;
                                    if (ih < 0 || ih >= H) continue;
                                    for (int64_t s = 0; s < kw; ++s) {
                                        const int64_t iw = ow * n.stride - n.pad + s;
                                        if (iw < 0 || iw >= W) continue;
                                        dx[static_cast<size_t>(((nn * C + c) * H + ih) * W + iw)] +=
                                            g * kd[((o * C + c) * kh + r) * kw + s];
                                        dk[static_cast<size_t>(((o * C + c) * kh + r) * kw + s)] +=
                                            g * xd[((nn * C + c) * H + ih) * W + iw];
                                    }
                                }
                        }
            add_into(acc, n.inputs[0], Tensor(x.shape(), DType::F32, std::move(dx)));
            add_into(acc, n.inputs[1], Tensor(k.shape(), DType::F32, std::move(dk)));
            break;
        }
        case OpKind::Add: {
            add_into(acc, n.inputs[0], dy.astype(DType::F32));
            add_into(acc, n.inputs[1], dy.astype(DType::F32));
            break;
        }
        case OpKind::Sub: {
            add_into(acc, n.inputs[0], dy.astype(DType::F32));
            Tensor neg = dy.astype(DType::F32);
            for (auto& v : neg.data()) v = -v;
            add_into(acc, n.inputs[1], std::move(neg));
            break;
        }
        case OpKind::Mul: {
            Tensor da = simdet::mul(dy, input(1).astype(dy.dtype())).astype(DType::F32);
            Tensor db = simdet::mul(dy, input(0).astype(dy.dtype())).astype(DType::F32);
            add_into(acc, n.inputs[0], std::move(da));
            add_into(acc, n.inputs[1], std::move(db));
            break;
        }
        case OpKind::Relu:
        case OpKind::LeakyRelu: {
            // subgradient at 0 takes the negative-side branch (0 / slope)
            const float slope = n.kind == OpKind::Relu ? 0.0f : n.scalar;
            const Tensor& x = input(0);
            Tensor dx(x.shape(), DType::F32, 0.0f);
            auto xd = x.data(), gd = dy.data();
            auto dd = dx.data();
            for (size_t i = 0; i < dd.size(); ++i) dd[i] = xd[i] > 0.0f ? gd[i] : slope * gd[i];
            add_into(acc, n.inputs[0], std::move(dx));
            break;
        }
        case OpKind::Exp: {
            const Tensor& y = values_[static_cast<size_t>(n.output)].t;
            Tensor dx(y.shape(), DType::F32, 0.0f);
            auto yd = y.data(), gd = dy.data();
            auto dd = dx.data();
            for (size_t i = 0; i < dd.size(); ++i) dd[i] = gd[i] * yd[i];
            add_into(acc, n.inputs[0], std::move(dx));
            break;
        }
        case OpKind::Scale: {
            Tensor dx = dy.astype(DType::F32);
            for (auto& v : dx.data()) v *= n.scalar;
            add_into(acc, n.inputs[0], std::move(dx));
            break;
        }
        case OpKind::ReduceSum:
        case OpKind::ReduceMean: {
            const auto red = reduce_mask(n.prev_shape, n.axes);
            const int64_t numel = shape_numel(n.prev_shape);
            const float inv = n.kind == OpKind::ReduceMean
                                  ? static_cast<float>(static_cast<double>(dy.numel()) / static_cast<double>(numel))
                                  : 1.0f;
            Tensor dx(n.prev_shape, DType::F32, 0.0f);
            auto gd = dy.data();
            auto dd = dx.data();
            for (int64_t i = 0; i < numel; ++i) {
                dd[i] = gd[reduce_out_index(n.prev_shape, red, i)] * inv;
            }
            add_into(acc, n.inputs[0], std::move(dx));
            break;
        }
        case OpKind::ReduceMax: {
            // gradient flows to the first max element of each group
            const auto red = reduce_mask(n.prev_shape, n.axes);
            const Tensor& x = input(0);
            const Tensor& y = values_[static_cast<size_t>(n.output)].t;
            Tensor dx(n.prev_shape, DType::F32, 0.0f);
            std::vector<bool> taken(static_cast<size_t>(y.numel()), false);
            auto xd = x.data(), yd = y.data(), gd = dy.data();
            auto dd = dx.data();
            for (int64_t i = 0; i < x.numel(); ++i) {
                const int64_t o = reduce_out_index(n.prev_shape, red, i);
                if (!taken[static_cast<size_t>(o)] && xd[i] == yd[o]) {
                    taken[static_cast<size_t>(o)] = true;
                    dd[i] = gd[o];
                }
            }
            add_into(acc, n.inputs[0], std::move(dx));
            break;
        }
        case OpKind::Reshape: {
            Tensor dx(n.prev_shape, DType::F32,
                      std::vector<float>(dy.data().begin(), dy.data().end()));
            add_into(acc, n.inputs[0], std::move(dx));
            break;
        }
        case OpKind::Custom: {
            std::vector<const Tensor*> in(n.inputs.size(), nullptr);
            for (size_t slot : n.op->saved_inputs) {
                in[slot] = &values_[static_cast<size_t>(n.inputs[slot])].t;
            }
            const Tensor* out = n.op->save_output ? &values_[static_cast<size_t>(n.output)].t : nullptr;
            std::vector<Tensor> grads = n.op->backward(dy, in, out, n.stash);
            if (grads.size() != n.inputs.size()) {
                throw ContractError(n.op->name + ": backward returned " + std::to_string(grads.size()) +
                                    " grads for " + std::to_string(n.inputs.size()) + " inputs");
            }
            for (size_t i = 0; i < grads.size(); ++i) {
                if (grads[i].defined()) add_into(acc, n.inputs[i], grads[i].astype(DType::F32));
            }
            break;
        }
        default:
            break;
    }
}

GradMap Tape::run_backward(ValueId out, Tensor seed, bool release_saved) {
    std::map<ValueId, Tensor> acc;
    acc.emplace(out, seed.astype(DType::F32));
    for (size_t ni = nodes_.size(); ni-- > 0;) {
        Node& n = nodes_[ni];
        auto it = acc.find(n.output);
        if (it != acc.end()) {
            Tensor dy = std::move(it->second);
            acc.erase(it);
            // finalize in the output's storage dtype
            dy = dy.astype(values_[static_cast<size_t>(n.output)].dtype);
            node_backward(n, dy, acc);
        }
        if (release_saved) {
            switch (n.kind) {
                case OpKind::MatMul:
                case OpKind::Conv2d:
                case OpKind::Mul:
                    unsave_ref(n.inputs[0]);
                    unsave_ref(n.inputs[1]);
                    break;
                case OpKind::Relu:
                case OpKind::LeakyRelu:
                    unsave_ref(n.inputs[0]);
                    break;
                case OpKind::Exp:
                    unsave_ref(n.output);
                    break;
                case OpKind::ReduceMax:
                    unsave_ref(n.inputs[0]);
                    unsave_ref(n.output);
                    break;
                case OpKind::Custom:
                    for (size_t slot : n.op->saved_inputs) unsave_ref(n.inputs[slot]);
                    if (n.op->save_output) unsave_ref(n.output);
                    break;
                default:
                    break;
            }
            if (n.stash_bytes > 0) {
                if (trace_) trace_->on_free(n.stash_bytes, n.op ? n.op->stash_tag : "stat");
                n.stash.clear();
                n.stash_bytes = 0;
            }
        }
    }
    GradMap grads;
    for (size_t i = 0; i < values_.size(); ++i) {
        const Value& v = values_[i];
        if (!v.is_leaf || !v.requires_grad) continue;
        auto it = acc.find(static_cast<ValueId>(i));
        if (it != acc.end()) {
            grads.emplace(static_cast<ValueId>(i), it->second.astype(v.dtype));
        } else {
            grads.emplace(static_cast<ValueId>(i), Tensor::zeros(v.shape, v.dtype));
        }
    }
    return grads;
}

double finite_diff_check(const TapeFn& f, const Tensor& x, double eps) {
    Tensor analytic;
    {
        Tape t;
        ValueId xid = t.leaf(x);
        ValueId loss = f(t, xid);
        analytic = t.backward(loss).at(xid);
    }
    auto eval = [&](const Tensor& xt) -> double {
        Tape t;
        ValueId xid = t.leaf(xt, false);
        ValueId loss = f(t, xid);
        return static_cast<double>(t.value(loss)[0]);
    };
    double max_err = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        Tensor xp = x, xm = x;
        xp[i] += static_cast<float>(eps);
        xm[i] -= static_cast<float>(eps);
        const double num = (eval(xp) - eval(xm)) / (2.0 * eps);
        const double ana = static_cast<double>(analytic[i]);
        const double err = std::abs(ana - num) / std::max(1.0, std::abs(ana));
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace simdet
