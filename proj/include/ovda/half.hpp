#pragma once

#include <cstdint>

namespace ovda {

// IEEE 754 binary16 conversion with round-to-nearest-even.
std::uint16_t float_to_half_bits(float value);
float half_bits_to_float(std::uint16_t bits);

inline float round_to_half(float value) { return half_bits_to_float(float_to_half_bits(value)); }

}  // namespace ovda
