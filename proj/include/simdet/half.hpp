// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace simdet {

// IEEE-754 binary16 conversion, round-to-nearest-even.
// Overflow goes to +-inf, subnormals are preserved, NaN passes through.
uint16_t float_to_half_bits(float f);
float half_bits_to_float(uint16_t h);

// Round a float through binary16 and back.
inline float quantize_half(float f) { return half_bits_to_float(float_to_half_bits(f)); }

} // namespace simdet
