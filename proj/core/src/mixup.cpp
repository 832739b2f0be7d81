#include "czsl/mixup.hpp"

#include "czsl/errors.hpp"

namespace czsl {

double sample_lambda(const MixupConfig& cfg, rng::Engine& eng) {
  if (cfg.alpha <= 0.0) throw ConfigError("mixup: alpha must be positive");
  return rng::beta(eng, cfg.alpha, cfg.alpha);
}

Tensor mix_images(const Tensor& a, const Tensor& b, double lambda) {
  if (!a.same_shape(b)) {
    throw ShapeError("mix_images: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros(a.shape());
  double mu = 1.0 - lambda;
  for (int64_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + mu * b[i];
  return out;
}

Tensor mix_labels(Composition c_i, Composition c_j, double lambda, const Episode& episode) {
  Tensor label = Tensor::zeros({episode.grid_size()});
  double mu = 1.0 - lambda;
  // grid_index throws for compositions outside the episode.
  label[episode.grid_index(c_i)] += lambda * lambda;
  label[episode.grid_index({c_i.p1, c_j.p2})] += lambda * mu;
  label[episode.grid_index({c_j.p1, c_i.p2})] += lambda * mu;
  label[episode.grid_index(c_j)] += mu * mu;
  return label;
}

std::vector<AugmentedQuery> augment_query(const Episode& episode, const Dataset& ds,
                                          const MixupConfig& cfg, rng::Engine& eng) {
  const int64_t n = static_cast<int64_t>(episode.query.size());
  if (n < 2) throw DataError("augment_query: query set needs at least 2 samples");
  std::vector<AugmentedQuery> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t j = rng::uniform_int(eng, 0, n - 2);
    if (j >= i) ++j;  // partner is never the sample itself
    double lambda = sample_lambda(cfg, eng);
    const auto& [id_i, c_i] = episode.query[static_cast<size_t>(i)];
    const auto& [id_j, c_j] = episode.query[static_cast<size_t>(j)];
    AugmentedQuery aq;
    aq.image = mix_images(ds.sample(id_i).image, ds.sample(id_j).image, lambda);
    aq.soft_label = mix_labels(c_i, c_j, lambda, episode);
    aq.source_index = i;
    aq.partner_index = j;
    aq.lambda = lambda;
    out.push_back(std::move(aq));
  }
  return out;
}

}  // namespace czsl
