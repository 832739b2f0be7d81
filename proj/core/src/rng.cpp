#include "czsl/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace czsl::rng {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t root, std::string_view tag) {
  // FNV-1a over the tag, then mixed with the root.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001b3ULL;
  }
  return splitmix64(root ^ h);
}

uint64_t derive_seed(uint64_t root, uint64_t index) {
  return splitmix64(root ^ splitmix64(index + 0x51ed2701ULL));
}

double uniform(Engine& eng) {
  return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

double uniform(Engine& eng, double lo, double hi) {
  return lo + (hi - lo) * uniform(eng);
}

int64_t uniform_int(Engine& eng, int64_t lo, int64_t hi) {
  if (lo > hi) throw std::invalid_argument("uniform_int: empty range");
  uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<int64_t>(eng());  // full 64-bit range
  uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  uint64_t x;
  do {
    x = eng();
  } while (x >= limit);
  return lo + static_cast<int64_t>(x % range);
}

double normal(Engine& eng) {
  double u1 = 0.0;
  do {
    u1 = uniform(eng);
  } while (u1 <= 0.0);
  double u2 = uniform(eng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

// Marsaglia-Tsang gamma for shape >= 1.
double gamma_ge1(Engine& eng, double shape) {
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = normal(eng);
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = uniform(eng);
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
      return d * v;
    }
  }
}

double gamma(Engine& eng, double shape) {
  if (shape >= 1.0) return gamma_ge1(eng, shape);
  // Boost via Gamma(shape+1) * U^(1/shape).
  double u = 0.0;
  do {
    u = uniform(eng);
  } while (u <= 0.0);
  return gamma_ge1(eng, shape + 1.0) * std::pow(u, 1.0 / shape);
}

}  // namespace

double beta(Engine& eng, double a, double b) {
  if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("beta: parameters must be positive");
  if (a == 1.0 && b == 1.0) return uniform(eng);
  double x = gamma(eng, a);
  double y = gamma(eng, b);
  double s = x + y;
  return s > 0.0 ? x / s : 0.5;
}

std::vector<int64_t> sample_indices(int64_t n, int64_t k, Engine& eng) {
  if (k > n) throw std::invalid_argument("sample_indices: k > n");
  // Partial Fisher-Yates over an index array.
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = uniform_int(eng, i, n - 1);
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(k));
  return idx;
}

}  // namespace czsl::rng
