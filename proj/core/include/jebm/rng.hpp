#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "jebm/tensor.hpp"

namespace jebm {

/// All randomness in the project flows from one u64 seed through named
/// streams: stream = fnv1a(seed, purpose, index). Independent streams make
/// chain-level parallelism and reseeding deterministic by construction.
class RngStream {
 public:
  explicit RngStream(std::uint64_t state) : gen_(state) {}

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }
  std::uint64_t next_u64() { return gen_(); }

  Tensor normal_tensor(std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.raw()) v = normal();
    return t;
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline std::uint64_t fnv1a_mix(std::uint64_t seed, std::string_view purpose,
                               std::uint64_t index) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_byte = [&h](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ull;
  };
  for (int i = 0; i < 8; ++i) mix_byte(static_cast<std::uint8_t>(seed >> (8 * i)));
  for (char c : purpose) mix_byte(static_cast<std::uint8_t>(c));
  for (int i = 0; i < 8; ++i) mix_byte(static_cast<std::uint8_t>(index >> (8 * i)));
  return h;
}

inline RngStream make_stream(std::uint64_t seed, std::string_view purpose,
                             std::uint64_t index = 0) {
  return RngStream(fnv1a_mix(seed, purpose, index));
}

}  // namespace jebm
