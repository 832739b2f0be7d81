#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace czsl::rng {

// All randomness in the project flows through these helpers. std::mt19937_64
// output is fully specified by the standard, and the distributions below are
// hand-rolled, so runs are reproducible across compilers and platforms.

using Engine = std::mt19937_64;

uint64_t splitmix64(uint64_t x);

/// Child seed for a named subsystem ("data", "sampler", "init", "mixup", ...).
uint64_t derive_seed(uint64_t root, std::string_view tag);
/// Child seed for an indexed stream (episode i, sample i, ...).
uint64_t derive_seed(uint64_t root, uint64_t index);

inline Engine make_engine(uint64_t seed) { return Engine(seed); }

/// Uniform double in [0, 1) with 53 random bits.
double uniform(Engine& eng);
double uniform(Engine& eng, double lo, double hi);

/// Uniform integer in [lo, hi], inclusive, unbiased.
int64_t uniform_int(Engine& eng, int64_t lo, int64_t hi);

/// Standard normal via Box-Muller.
double normal(Engine& eng);

/// Beta(a, b) draw; Beta(1, 1) is exactly uniform(eng).
double beta(Engine& eng, double a, double b);

/// Fisher-Yates shuffle.
template <class T>
void shuffle(std::vector<T>& v, Engine& eng) {
  for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
    int64_t j = uniform_int(eng, 0, i);
    std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
  }
}

/// k distinct indices from [0, n), in random order.
std::vector<int64_t> sample_indices(int64_t n, int64_t k, Engine& eng);

}  // namespace czsl::rng
