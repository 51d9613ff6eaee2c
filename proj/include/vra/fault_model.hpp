#pragma once

#include <cstdint>
#include <vector>

#include "vra/layers.hpp"

namespace vra {

// IEEE-754 single precision bit layout: 31 = sign, 30..23 = exponent
// (30 most significant), 22..0 = mantissa.
inline constexpr int kWordLength = 32;

// Toggles exactly one bit of the encoding. Involution: flipping twice gives
// the original bit pattern, including NaN/Inf encodings.
float bitflip(float value, int bit);

enum class DeltaKind { Finite, PlusInf, MinusInf, NaNDelta };

struct BitflipDelta {
  float golden = 0.0f;
  float faulty = 0.0f;
  DeltaKind kind = DeltaKind::Finite;
  float delta = 0.0f;  // faulty - golden, only meaningful when kind == Finite
};

BitflipDelta bitflip_delta(float golden, int bit);

// Statistical fault-injection sample size for a 95% confidence level and 1%
// error margin over a population of n_bits fault sites. Rounded up; bounded
// by min(n_bits, 9604).
uint64_t required_faults(uint64_t n_bits);

// One sampled fault: a bitflip at one neuron output while one dataset input
// is processed. surface is filled by the campaign driver.
struct FaultSpec {
  int surface = 0;
  int neuron = 0;
  int bit = 0;
  int input_index = 0;
};

// count faults drawn uniformly over (neuron in layer) x (bit) x (input).
// Each fault is derived from (seed, ordinal) alone, so the list is identical
// for any evaluation order or worker count.
std::vector<FaultSpec> sample_faults(int layer_neurons, uint64_t count,
                                     int dataset_size, uint64_t seed);

}  // namespace vra
