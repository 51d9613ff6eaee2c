#include "vra/fault_model.hpp"

#include <bit>
#include <cmath>

#include "vra/errors.hpp"
#include "vra/rng.hpp"

namespace vra {

float bitflip(float value, int bit) {
  if (bit < 0 || bit >= kWordLength) {
    throw AddressingError("bitflip: bit " + std::to_string(bit) +
                          " outside [0,31]");
  }
  uint32_t bits = std::bit_cast<uint32_t>(value);
  bits ^= (uint32_t(1) << bit);
  return std::bit_cast<float>(bits);
}

BitflipDelta bitflip_delta(float golden, int bit) {
  BitflipDelta d;
  d.golden = golden;
  d.faulty = bitflip(golden, bit);
  if (std::isnan(d.faulty)) {
    d.kind = DeltaKind::NaNDelta;
  } else if (std::isinf(d.faulty)) {
    d.kind = d.faulty > 0.0f ? DeltaKind::PlusInf : DeltaKind::MinusInf;
  } else if (!std::isfinite(golden)) {
    // Golden Inf/NaN cannot occur in a well-formed golden pass; classify the
    // numeric difference anyway.
    d.kind = DeltaKind::NaNDelta;
  } else {
    d.kind = DeltaKind::Finite;
    d.delta = d.faulty - golden;
  }
  return d;
}

uint64_t required_faults(uint64_t n_bits) {
  if (n_bits == 0) throw ConfigError("required_faults: empty population");
  // n / (1 + e^2 * (n-1) / (z^2 * p(1-p))), e = 0.01, z = 1.96, p = 0.5.
  double n = double(n_bits);
  double denom = 1.0 + (0.01 * 0.01) * (n - 1.0) / (1.96 * 1.96 * 0.5 * 0.5);
  return uint64_t(std::ceil(n / denom));
}

std::vector<FaultSpec> sample_faults(int layer_neurons, uint64_t count,
                                     int dataset_size, uint64_t seed) {
  if (layer_neurons <= 0) throw ConfigError("sample_faults: empty layer");
  if (dataset_size <= 0) throw ConfigError("sample_faults: empty dataset");
  if (count == 0) throw ConfigError("sample_faults: zero count");
  std::vector<FaultSpec> out(count);
  for (uint64_t ord = 0; ord < count; ++ord) {
    Rng rng(mix_seed(seed, ord));
    FaultSpec& f = out[ord];
    f.neuron = int(rng.next_below(uint64_t(layer_neurons)));
    f.bit = int(rng.next_below(kWordLength));
    f.input_index = int(rng.next_below(uint64_t(dataset_size)));
  }
  return out;
}

}  // namespace vra
