#pragma once

#include "czsl/episode.hpp"

namespace czsl {

struct MixupConfig {
  double alpha = 1.0;  // Beta(alpha, alpha); alpha = 1 is uniform
};

/// Interpolation weight in [0,1].
double sample_lambda(const MixupConfig& cfg, rng::Engine& eng);

/// Elementwise lambda * a + (1 - lambda) * b.
Tensor mix_images(const Tensor& a, const Tensor& b, double lambda);

/// Soft label over the episode grid: mass lambda^2 on (p1_i, p2_i),
/// lambda(1-lambda) on each cross pair, (1-lambda)^2 on (p1_j, p2_j).
/// Coinciding cells accumulate, so the result is always a distribution.
Tensor mix_labels(Composition c_i, Composition c_j, double lambda, const Episode& episode);

struct AugmentedQuery {
  Tensor image;
  Tensor soft_label;  // over the episode grid
  int64_t source_index = -1;
  int64_t partner_index = -1;
  double lambda = 0.0;
};

/// One augmented sample per query sample; partner drawn uniformly from the
/// rest of the query set, fresh lambda per pair.
std::vector<AugmentedQuery> augment_query(const Episode& episode, const Dataset& ds,
                                          const MixupConfig& cfg, rng::Engine& eng);

}  // namespace czsl
