// SPDX-License-Identifier: Apache-2.0
#include "simdet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "simdet/half.hpp"

namespace simdet {

void validate_shape(const Shape& s) {
    if (s.empty() || s.size() > 4) {
        throw ShapeError("invalid shape rank " + std::to_string(s.size()) + " (want 1..4)");
    }
    for (int64_t d : s) {
        if (d < 1) {
            throw ShapeError("invalid shape " + shape_str(s) + ": dims must be >= 1");
        }
    }
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

uint64_t Rng::next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

float Rng::uniform(float lo, float hi) {
    const float u = static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
    return lo + (hi - lo) * u;
}

double Rng::uniform_d(double lo, double hi) {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

Tensor::Tensor(Shape shape, DType dtype, float fill) : shape_(std::move(shape)), dtype_(dtype) {
    validate_shape(shape_);
    data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
    quantize();
}

Tensor::Tensor(Shape shape, DType dtype, std::vector<float> data)
    : shape_(std::move(shape)), dtype_(dtype), data_(std::move(data)) {
    validate_shape(shape_);
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size())) {
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
    }
    quantize();
}

Tensor Tensor::uniform(Shape shape, DType dtype, uint64_t seed, float lo, float hi) {
    validate_shape(shape);
    Rng rng(seed);
    std::vector<float> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), dtype, std::move(v));
}

void Tensor::quantize() {
    if (dtype_ != DType::F16) return;
    for (auto& x : data_) x = quantize_half(x);
}

Tensor Tensor::astype(DType d) const {
    Tensor t = *this;
    if (d != dtype_) {
        t.dtype_ = d;
        t.quantize();
    }
    return t;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    if (a.dtype() != b.dtype()) {
        throw ShapeError(std::string(op) + ": dtype mismatch");
    }
}

template <class F>
Tensor map1(const Tensor& a, F f) {
    Tensor out = a;
    for (auto& x : out.data()) x = f(x);
    out.quantize();
    return out;
}

template <class F>
Tensor map2(const Tensor& a, const Tensor& b, const char* name, F f) {
    check_same_shape(a, b, name);
    Tensor out = a;
    auto bd = b.data();
    auto od = out.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = f(od[i], bd[i]);
    out.quantize();
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) { return map2(a, b, "add", [](float x, float y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return map2(a, b, "sub", [](float x, float y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return map2(a, b, "mul", [](float x, float y) { return x * y; }); }
Tensor relu(const Tensor& a) { return map1(a, [](float x) { return x > 0.0f ? x : 0.0f; }); }
Tensor leaky_relu(const Tensor& a, float slope) {
    return map1(a, [slope](float x) { return x > 0.0f ? x : slope * x; });
}
Tensor exp(const Tensor& a) { return map1(a, [](float x) { return std::exp(x); }); }
Tensor scale(const Tensor& a, float s) { return map1(a, [s](float x) { return x * s; }); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2) {
        throw ShapeError("matmul: rank-2 operands required");
    }
    if (a.dtype() != b.dtype()) throw ShapeError("matmul: dtype mismatch");
    const int64_t m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<float> out(static_cast<size_t>(m * n));
    auto ad = a.data();
    auto bd = b.data();
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            float acc = 0.0f;
            for (int64_t p = 0; p < k; ++p) acc += ad[i * k + p] * bd[p * n + j];
            out[static_cast<size_t>(i * n + j)] = acc;
        }
    }
    return Tensor({m, n}, a.dtype(), std::move(out));
}

Shape conv2d_out_shape(const Shape& xs, const Shape& ks, int stride, int pad) {
    if (xs.size() != 4 || ks.size() != 4) throw ShapeError("conv2d: rank-4 operands required");
    if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride >= 1, pad >= 0 required");
    if (xs[1] != ks[1]) throw ShapeError("conv2d: channel mismatch " + shape_str(xs) + " vs " + shape_str(ks));
    const int64_t ho = (xs[2] + 2 * pad - ks[2]) / stride + 1;
    const int64_t wo = (xs[3] + 2 * pad - ks[3]) / stride + 1;
    if (xs[2] + 2 * pad < ks[2] || xs[3] + 2 * pad < ks[3] || ho < 1 || wo < 1) {
        throw ShapeError("conv2d: kernel " + shape_str(ks) + " larger than padded input " + shape_str(xs));
    }
    return {xs[0], ks[0], ho, wo};
}

Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad) {
    if (x.dtype() != k.dtype()) throw ShapeError("conv2d: dtype mismatch");
    const Shape os = conv2d_out_shape(x.shape(), k.shape(), stride, pad);
    const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t O = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
    const int64_t Ho = os[2], Wo = os[3];
    std::vector<float> out(static_cast<size_t>(shape_numel(os)), 0.0f);
    auto xd = x.data();
    auto kd = k.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t o = 0; o < O; ++o)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    float acc = 0.0f;
                    for (int64_t c = 0; c < C; ++c)
                        for (int64_t r = 0; r < kh; ++r) {
                            const int64_t ih = oh * stride - pad + r;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t s = 0; s < kw; ++s) {
                                const int64_t iw = ow * stride - pad + s;
                                if (iw < 0 || iw >= W) continue;
                                acc += xd[((n * C + c) * H + ih) * W + iw] * kd[((o * C + c) * kh + r) * kw + s];
                            }
                        }
                    out[static_cast<size_t>(((n * O + o) * Ho + oh) * Wo + ow)] = acc;
                }
    return Tensor(os, x.dtype(), std::move(out));
}

Tensor reduce(ReduceKind kind, const Tensor& a, const std::vector<int>& axes) {
    const auto& s = a.shape();
    const int rank = static_cast<int>(s.size());
    std::vector<bool> red(static_cast<size_t>(rank), false);
    for (int ax : axes) {
        if (ax < 0 || ax >= rank) throw ShapeError("reduce: invalid axis " + std::to_string(ax));
        red[static_cast<size_t>(ax)] = true;
    }
    if (axes.empty()) red.assign(static_cast<size_t>(rank), true); // empty axes means all

    Shape os;
    int64_t group = 1;
    for (int i = 0; i < rank; ++i) {
        if (red[static_cast<size_t>(i)]) group *= s[static_cast<size_t>(i)];
        else os.push_back(s[static_cast<size_t>(i)]);
    }
    if (os.empty()) os = {1};

    const float init = kind == ReduceKind::Max ? -std::numeric_limits<float>::infinity() : 0.0f;
    std::vector<float> out(static_cast<size_t>(shape_numel(os)), init);

    // strides of the output within the input's kept axes
    std::vector<int64_t> ostride(static_cast<size_t>(rank), 0);
    int64_t st = 1;
    for (int i = rank - 1; i >= 0; --i) {
        if (!red[static_cast<size_t>(i)]) {
            ostride[static_cast<size_t>(i)] = st;
            st *= s[static_cast<size_t>(i)];
        }
    }

    auto ad = a.data();
    std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
    for (int64_t flat = 0; flat < a.numel(); ++flat) {
        int64_t rem = flat, oflat = 0;
        for (int i = rank - 1; i >= 0; --i) {
            const int64_t d = s[static_cast<size_t>(i)];
            const int64_t ix = rem % d;
            rem /= d;
            oflat += ix * ostride[static_cast<size_t>(i)];
        }
        float& slot = out[static_cast<size_t>(oflat)];
        if (kind == ReduceKind::Max) slot = std::max(slot, ad[flat]);
        else slot += ad[flat];
    }
    if (kind == ReduceKind::Mean) {
        for (auto& v : out) v /= static_cast<float>(group);
    }
    return Tensor(os, a.dtype(), std::move(out));
}

} // namespace simdet
