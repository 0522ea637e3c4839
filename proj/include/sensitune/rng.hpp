// Copyright 2026 The Sensitune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Counter-based random streams. Draw i of stream (seed, stream) is
// splitmix64(key + i * golden) with key derived from both identifiers, so
// every rollout owns an independent, platform-independent sequence. Normal
// variates use the Box-Muller transform rather than
// std::normal_distribution, whose output is implementation-defined.

#ifndef SENSITUNE_RNG_HPP_
#define SENSITUNE_RNG_HPP_

#include <cmath>
#include <cstdint>

namespace sensitune {

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes several identifiers (seed, cell, trajectory, iteration...) into one
// stream id.
inline constexpr std::uint64_t derive_stream(std::uint64_t base, std::uint64_t index) {
  return splitmix64(base + kGoldenGamma * (index + 1));
}

class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64(seed + kGoldenGamma) ^ splitmix64(stream * 0xd1342543de82ef95ULL + 1)) {}

  std::uint64_t next_u64() { return splitmix64(key_ + kGoldenGamma * ++counter_); }

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = 2.0 * M_PI * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sensitune

#endif  // SENSITUNE_RNG_HPP_
