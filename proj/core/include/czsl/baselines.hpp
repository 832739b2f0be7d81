#pragma once

#include "czsl/meta_train.hpp"

namespace czsl {

/// Per-episode fitting protocol shared by the baselines: minibatch SGD on the
/// support set, no meta-training.
struct BaselineConfig {
  int64_t iters = 100;
  int64_t batch = 4;
  double lr = 1e-2;
  double weight_decay = 1e-3;
};

/// Two independent primitive classifiers on pooled features; the composition
/// probability is the product of the two primitive probabilities over the
/// full episode grid.
std::vector<Composition> visprod_fit_infer(const Episode& episode, const FeatureCache& cache,
                                           const BaselineConfig& cfg, rng::Engine& eng);

/// Grid of composition probabilities for one query sample (row-major), for
/// inspecting the factorization.
Tensor visprod_probabilities(const Episode& episode, const FeatureCache& cache,
                             const BaselineConfig& cfg, rng::Engine& eng, int64_t query_index);

/// Label-embedding baseline: image MLP into a shared space, composition
/// embedding a linear transform of the averaged primitive vectors, inner
/// product score, cross-entropy over the grid.
std::vector<Composition> le_fit_infer(const Episode& episode, const Dataset& ds,
                                      const FeatureCache& cache, const EmbeddingProvider& provider,
                                      const BaselineConfig& cfg, rng::Engine& eng,
                                      int64_t embed_dim = 32, int64_t hidden = 64);

}  // namespace czsl
