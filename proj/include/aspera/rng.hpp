// Copyright 2026 AspeRa Contributors
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

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "aspera/tensor.hpp"

namespace aspera {

// Seeded RNG with hand-rolled draws. std::mt19937_64's raw output is pinned
// by the standard, but the <random> distributions are not, so every draw here
// goes through explicit arithmetic to keep runs byte-identical across
// compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, bound). Modulo bias is irrelevant at the bounds
  // used here (bound << 2^64).
  std::uint64_t uniform(std::uint64_t bound) { return gen_() % bound; }

  std::size_t index(std::size_t size) {
    return static_cast<std::size_t>(uniform(static_cast<std::uint64_t>(size)));
  }

  // Uniform double in [0, 1).
  double real() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double real(double lo, double hi) { return lo + (hi - lo) * real(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    // Fisher-Yates with explicit draws.
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

inline Tensor random_tensor(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.real(lo, hi);
  return t;
}

}  // namespace aspera
