// SPDX-License-Identifier: Apache-2.0
#include "simdet/half.hpp"

#include <bit>
#include <cstring>

namespace simdet {

uint16_t float_to_half_bits(float f) {
    uint32_t x;
    std::memcpy(&x, &f, 4);
    const uint32_t sign = (x >> 16) & 0x8000u;
    const uint32_t absx = x & 0x7fffffffu;

    if (absx >= 0x7f800000u) {
        // inf or NaN; keep NaN quiet with a canonical payload
        return static_cast<uint16_t>(sign | (absx > 0x7f800000u ? 0x7e00u : 0x7c00u));
    }

    const int exp = static_cast<int>(absx >> 23) - 127;
    if (exp >= 16) {
        return static_cast<uint16_t>(sign | 0x7c00u); // >= 2^16 always overflows
    }

    if (exp >= -14) {
        // normal binary16 range; round the low 13 mantissa bits to nearest even
        const uint32_t mant = absx & 0x7fffffu;
        uint16_t h = static_cast<uint16_t>(((exp + 15) << 10) | (mant >> 13));
        const uint32_t rest = mant & 0x1fffu;
        if (rest > 0x1000u || (rest == 0x1000u && (h & 1u))) {
            h++; // mantissa carry may roll into the exponent, including to inf
        }
        return static_cast<uint16_t>(sign | h);
    }

    if (exp < -25) {
        return static_cast<uint16_t>(sign); // below half of the smallest subnormal
    }

    // subnormal target: value = sig * 2^(exp-23), quantum 2^-24
    const uint32_t sig = (absx & 0x7fffffu) | 0x800000u;
    const int shift = -(exp + 1); // 14..24
    uint32_t m = sig >> shift;
    const uint32_t rest = sig & ((1u << shift) - 1u);
    const uint32_t half = 1u << (shift - 1);
    if (rest > half || (rest == half && (m & 1u))) {
        m++;
    }
    return static_cast<uint16_t>(sign | m);
}

float half_bits_to_float(uint16_t h) {
    const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
    const uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t mant = h & 0x3ffu;
    uint32_t out;
    if (exp == 0x1fu) {
        out = sign | 0x7f800000u | (mant << 13);
    } else if (exp != 0) {
        out = sign | ((exp + 112u) << 23) | (mant << 13);
    } else if (mant == 0) {
        out = sign;
    } else {
        // subnormal: value = mant * 2^-24, normalize into float
        const int p = 31 - std::countl_zero(mant);
        out = sign | (static_cast<uint32_t>(p + 103) << 23) | ((mant << (23 - p)) & 0x7fffffu);
    }
    float f;
    std::memcpy(&f, &out, 4);
    return f;
}

} // namespace simdet
