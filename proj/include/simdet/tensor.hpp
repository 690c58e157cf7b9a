// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "simdet/errors.hpp"

namespace simdet {

enum class DType : uint8_t { F32 = 0, F16 = 1 };

inline int dtype_width(DType d) { return d == DType::F32 ? 4 : 2; }
inline const char* dtype_name(DType d) { return d == DType::F32 ? "fp32" : "fp16"; }

using Shape = std::vector<int64_t>; // row-major, rank 1..4 (N,C,H,W)

void validate_shape(const Shape& s);
int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Deterministic splitmix64-based generator; independent of libstdc++
// distribution internals so buffers are bitwise stable.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}
    uint64_t next_u64();
    // uniform in [lo, hi)
    float uniform(float lo = 0.0f, float hi = 1.0f);
    double uniform_d(double lo, double hi);

private:
    uint64_t state_;
};

// Dense row-major tensor. FP16 tensors hold binary16-representable values
// in a float buffer; every op widens to FP32, computes, and rounds back.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, DType dtype, float fill);
    Tensor(Shape shape, DType dtype, std::vector<float> data);

    static Tensor zeros(Shape shape, DType dtype = DType::F32) { return Tensor(std::move(shape), dtype, 0.0f); }
    static Tensor full(Shape shape, DType dtype, float v) { return Tensor(std::move(shape), dtype, v); }
    static Tensor uniform(Shape shape, DType dtype, uint64_t seed, float lo = 0.0f, float hi = 1.0f);
    static Tensor scalar(float v, DType dtype = DType::F32) { return Tensor({1}, dtype, v); }

    const Shape& shape() const { return shape_; }
    DType dtype() const { return dtype_; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int64_t bytes() const { return numel() * dtype_width(dtype_); }
    bool is_scalar() const { return numel() == 1; }
    bool defined() const { return !shape_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // Round the buffer through binary16 when dtype is F16.
    void quantize();
    Tensor astype(DType d) const;

private:
    Shape shape_;
    DType dtype_ = DType::F32;
    std::vector<float> data_;
};

// elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope);
Tensor exp(const Tensor& a);
Tensor scale(const Tensor& a, float s);

// linear algebra / conv, FP32 accumulation
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& x, const Tensor& k, int stride, int pad);
Shape conv2d_out_shape(const Shape& x, const Shape& k, int stride, int pad);

enum class ReduceKind { Sum, Mean, Max };
Tensor reduce(ReduceKind kind, const Tensor& a, const std::vector<int>& axes);

} // namespace simdet
