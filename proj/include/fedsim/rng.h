/*
 * Copyright 2026 The Fedsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEDSIM_RNG_H_
#define FEDSIM_RNG_H_

#include <cstdint>
#include <limits>

namespace fedsim {

// Independent stream families. The numeric values are part of the
// reproducibility contract: changing one changes every seeded result.
enum class Purpose : std::uint64_t {
  kLatency = 1,
  kTraining = 2,
  kCohort = 3,
  kTeacher = 4,
  kInit = 5,
  kDataCenters = 6,
  kDataClients = 7,
  kDataEval = 8,
  kTimeLimit = 9,
  kLatencyReport = 10,
  kQuadSetup = 11,
  kQuadProbe = 12,
};

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t Mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based SplitMix64 stream.
///
/// The n-th output of a stream is Mix64(key + n * kGoldenGamma), so a stream
/// is fully described by (key, counter). Keys are derived by hashing
/// (seed, purpose, a, b); two streams with different derivation tuples are
/// statistically independent, which lets every (client, round, purpose)
/// triple own its draws without coordinating with anything else.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key) : key_(key) {}

  static Stream Derive(std::uint64_t seed, Purpose purpose, std::uint64_t a = 0,
                       std::uint64_t b = 0);

  std::uint64_t NextU64() { return Mix64(key_ + (++counter_) * kGoldenGamma); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double Uniform() { return static_cast<double>(NextU64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1].
  double UniformPositive() {
    return static_cast<double>((NextU64() >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the paired value is cached.
  double Normal();

  // Gamma(shape, 1) via Marsaglia-Tsang.
  double Gamma(double shape);

  // Unbiased integer in [0, n). n must be positive.
  std::uint64_t Below(std::uint64_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()() { return NextU64(); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedsim

#endif  // FEDSIM_RNG_H_
