#pragma once

#include "czsl/dataset.hpp"

namespace czsl {

/// Procedural color-shape world. Each TYPE1 primitive is a distinct RGB
/// color, each TYPE2 primitive a distinct binary shape mask; a sample is the
/// color applied to the shape, placed with a small random offset over a
/// per-sample low-frequency background, plus Gaussian pixel noise.
struct SyntheticConfig {
  int64_t n_type1 = 12;
  int64_t n_type2 = 12;
  int64_t samples_per_composition = 20;
  int64_t image_size = 16;
  double noise_sigma = 0.05;
  int64_t placement_jitter = 2;       // max |offset| in pixels
  double background_amplitude = 0.2;  // texture swing around the base gray
  uint64_t seed = 0;
  Split split = Split::kTrain;
  std::string name_prefix;            // keeps primitive names disjoint across splits
};

/// All n_type1 x n_type2 compositions realized, samples_per_composition each.
/// Pure function of the config: same config, same bytes.
Dataset generate_synthetic(const SyntheticConfig& cfg);

/// Convenience overload with the common knobs.
Dataset generate_synthetic(int64_t n_type1, int64_t n_type2, int64_t samples_per_composition,
                           int64_t image_size, double noise_sigma, uint64_t seed);

/// Three independent worlds (train/val/test) with disjoint primitives and
/// globally unique sample ids. Sub-seeds are derived from cfg.seed per split.
std::vector<Dataset> generate_benchmark_parts(const SyntheticConfig& cfg);

/// The three parts merged into one dataset.
Dataset generate_benchmark(const SyntheticConfig& cfg);

}  // namespace czsl
