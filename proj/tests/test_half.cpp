// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "simdet/half.hpp"
#include "simdet/tensor.hpp"
#include "oracles.hpp"

using namespace simdet;

TEST_CASE("decode matches the field-layout oracle for every pattern") {
    for (uint32_t b = 0; b <= 0xffff; ++b) {
        const uint16_t bits = static_cast<uint16_t>(b);
        const float got = half_bits_to_float(bits);
        const double want = oracle::half_decode(bits);
        if (std::isnan(want)) {
            CHECK(std::isnan(got));
        } else {
            CHECK(static_cast<double>(got) == want);
        }
    }
}

TEST_CASE("every finite half round-trips exactly") {
    for (uint32_t b = 0; b <= 0xffff; ++b) {
        const uint16_t bits = static_cast<uint16_t>(b);
        const int exp = (bits >> 10) & 0x1f;
        if (exp == 0x1f) continue; // inf/nan handled separately
        CHECK(float_to_half_bits(half_bits_to_float(bits)) == bits);
    }
}

TEST_CASE("encode matches the nearest-even table oracle on random floats") {
    oracle::HalfTable table;
    Rng rng(123);
    for (int i = 0; i < 20000; ++i) {
        // cover normals, subnormals and the overflow band
        float f;
        switch (i % 4) {
            case 0: f = rng.uniform(-70000.0f, 70000.0f); break;
            case 1: f = rng.uniform(-2.0f, 2.0f); break;
            case 2: f = rng.uniform(-1e-4f, 1e-4f); break;
            default: f = std::ldexp(rng.uniform(-1.0f, 1.0f), static_cast<int>(rng.next_u64() % 40) - 30);
        }
        CHECK(float_to_half_bits(f) == table.encode(f));
    }
}

TEST_CASE("documented rounding edges") {
    CHECK(half_bits_to_float(float_to_half_bits(1.0f)) == 1.0f);
    // 65504 is the largest finite value; the midpoint 65520 rounds up to inf
    CHECK(half_bits_to_float(float_to_half_bits(65504.0f)) == 65504.0f);
    CHECK(float_to_half_bits(65520.0f) == 0x7c00);
    CHECK(std::isinf(half_bits_to_float(float_to_half_bits(65520.0f))));
    CHECK(float_to_half_bits(-65520.0f) == 0xfc00);
    // halfway to the smallest subnormal (2^-24): ties to even -> zero
    CHECK(half_bits_to_float(float_to_half_bits(std::ldexp(1.0f, -25))) == 0.0f);
    // just above the midpoint rounds to the smallest subnormal
    CHECK(half_bits_to_float(float_to_half_bits(std::ldexp(1.1f, -25))) ==
          static_cast<float>(std::ldexp(1.0, -24)));
    // 1 + 2^-11 is halfway between 1 and 1+2^-10: even mantissa wins
    CHECK(half_bits_to_float(float_to_half_bits(1.0f + std::ldexp(1.0f, -11))) == 1.0f);
    // signed zero preserved
    CHECK(float_to_half_bits(-0.0f) == 0x8000);
    CHECK(float_to_half_bits(0.0f) == 0x0000);
    // inf and nan pass through
    CHECK(float_to_half_bits(std::numeric_limits<float>::infinity()) == 0x7c00);
    CHECK(std::isnan(half_bits_to_float(float_to_half_bits(std::nanf("")))));
}

TEST_CASE("quantize_half is idempotent") {
    Rng rng(9);
    for (int i = 0; i < 2000; ++i) {
        const float f = rng.uniform(-1000.0f, 1000.0f);
        const float q = quantize_half(f);
        CHECK(quantize_half(q) == q);
    }
}
