#include "czsl/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "czsl/errors.hpp"

namespace czsl {

namespace {

// Cycling minibatch order over the support set, reshuffled per pass.
class BatchCycler {
public:
  BatchCycler(int64_t n, rng::Engine& eng) : eng_(eng), order_(static_cast<size_t>(n)) {
    for (int64_t i = 0; i < n; ++i) order_[static_cast<size_t>(i)] = i;
    rng::shuffle(order_, eng_);
  }

  std::vector<int64_t> next(int64_t batch) {
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(batch));
    for (int64_t k = 0; k < batch; ++k) {
      if (cursor_ == order_.size()) {
        rng::shuffle(order_, eng_);
        cursor_ = 0;
      }
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

private:
  rng::Engine& eng_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
};

Tensor gather_feature_rows(const Episode& episode, const FeatureCache& cache,
                           const std::vector<int64_t>& indices) {
  int64_t c = cache.pooled(episode.support[0].first).size();
  Tensor rows = Tensor::zeros({static_cast<int64_t>(indices.size()), c});
  for (size_t i = 0; i < indices.size(); ++i) {
    const Tensor& p = cache.pooled(episode.support[static_cast<size_t>(indices[i])].first);
    for (int64_t k = 0; k < c; ++k) rows.at(static_cast<int64_t>(i), k) = p[k];
  }
  return rows;
}

// index of a primitive id within the episode's ordered set
int64_t position_of(const std::vector<int32_t>& ids, int32_t id) {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) throw DataError("baseline: primitive outside the episode");
  return it - ids.begin();
}

struct LinearHead {
  Tensor w;  // [c, n]
  Tensor b;  // [n]
};

LinearHead init_head(int64_t c, int64_t n, rng::Engine& eng) {
  double bound = std::sqrt(6.0 / static_cast<double>(c + n));
  Tensor w = Tensor::zeros({c, n});
  for (int64_t i = 0; i < w.size(); ++i) w[i] = rng::uniform(eng, -bound, bound);
  return {std::move(w), Tensor::zeros({n})};
}

// One SGD step of mean cross-entropy on (rows, labels) for a linear head.
void head_sgd_step(LinearHead& head, const Tensor& rows, const std::vector<int64_t>& labels,
                   const BaselineConfig& cfg) {
  Graph g;
  Var w = g.param(head.w);
  Var b = g.param(head.b);
  int64_t n = head.b.size();
  Var scores = affine(g.value(rows), w, reshape(b, {1, n}));
  Tensor targets = Tensor::zeros({rows.dim(0), n});
  for (size_t i = 0; i < labels.size(); ++i) {
    targets.at(static_cast<int64_t>(i), labels[i]) = 1.0;
  }
  Var loss = mean_cross_entropy_rows(scores, g.value(std::move(targets)));
  std::vector<Var> grads = g.backward(loss, {w, b});
  head.w.add_scaled(head.w, -cfg.lr * cfg.weight_decay);
  head.w.add_scaled(grads[0].value(), -cfg.lr);
  head.b.add_scaled(head.b, -cfg.lr * cfg.weight_decay);
  head.b.add_scaled(grads[1].value(), -cfg.lr);
}

std::pair<LinearHead, LinearHead> visprod_fit(const Episode& episode, const FeatureCache& cache,
                                              const BaselineConfig& cfg, rng::Engine& eng) {
  int64_t c = cache.pooled(episode.support[0].first).size();
  int64_t np1 = static_cast<int64_t>(episode.p1.size());
  int64_t np2 = static_cast<int64_t>(episode.p2.size());
  LinearHead head1 = init_head(c, np1, eng);
  LinearHead head2 = init_head(c, np2, eng);
  BatchCycler cycler(static_cast<int64_t>(episode.support.size()), eng);
  for (int64_t it = 0; it < cfg.iters; ++it) {
    std::vector<int64_t> batch = cycler.next(cfg.batch);
    Tensor rows = gather_feature_rows(episode, cache, batch);
    std::vector<int64_t> labels1, labels2;
    for (int64_t idx : batch) {
      const Composition& comp = episode.support[static_cast<size_t>(idx)].second;
      labels1.push_back(position_of(episode.p1, comp.p1));
      labels2.push_back(position_of(episode.p2, comp.p2));
    }
    head_sgd_step(head1, rows, labels1, cfg);
    head_sgd_step(head2, rows, labels2, cfg);
  }
  return {std::move(head1), std::move(head2)};
}

Tensor head_probabilities(const LinearHead& head, const Tensor& feats) {
  int64_t n = head.b.size();
  Tensor scores = Tensor::zeros({n});
  for (int64_t j = 0; j < n; ++j) {
    double acc = head.b[j];
    for (int64_t k = 0; k < feats.size(); ++k) acc += feats[k] * head.w.at(k, j);
    scores[j] = acc;
  }
  return softmax(scores);
}

Tensor grid_probabilities(const LinearHead& head1, const LinearHead& head2, const Tensor& feats) {
  Tensor p1 = head_probabilities(head1, feats);
  Tensor p2 = head_probabilities(head2, feats);
  Tensor grid = Tensor::zeros({p1.size() * p2.size()});
  for (int64_t i = 0; i < p1.size(); ++i) {
    for (int64_t j = 0; j < p2.size(); ++j) grid[i * p2.size() + j] = p1[i] * p2[j];
  }
  return grid;
}

}  // namespace

std::vector<Composition> visprod_fit_infer(const Episode& episode, const FeatureCache& cache,
                                           const BaselineConfig& cfg, rng::Engine& eng) {
  auto [head1, head2] = visprod_fit(episode, cache, cfg, eng);
  std::vector<Composition> predictions;
  predictions.reserve(episode.query.size());
  for (const auto& [id, truth] : episode.query) {
    Tensor grid = grid_probabilities(head1, head2, cache.pooled(id));
    predictions.push_back(episode.grid_composition(argmax_index(grid)));
  }
  return predictions;
}

Tensor visprod_probabilities(const Episode& episode, const FeatureCache& cache,
                             const BaselineConfig& cfg, rng::Engine& eng, int64_t query_index) {
  auto [head1, head2] = visprod_fit(episode, cache, cfg, eng);
  const auto& [id, truth] = episode.query.at(static_cast<size_t>(query_index));
  return grid_probabilities(head1, head2, cache.pooled(id));
}

std::vector<Composition> le_fit_infer(const Episode& episode, const Dataset& ds,
                                      const FeatureCache& cache, const EmbeddingProvider& provider,
                                      const BaselineConfig& cfg, rng::Engine& eng,
                                      int64_t embed_dim, int64_t hidden) {
  const int64_t c = cache.pooled(episode.support[0].first).size();
  const int64_t grid = episode.grid_size();
  const int64_t n2 = static_cast<int64_t>(episode.p2.size());

  // Composition embeddings: averaged primitive vectors through a learned
  // transform. The average is a fixed input; the transform is fitted.
  Tensor averaged = Tensor::zeros({grid, provider.dim()});
  for (int64_t i = 0; i < static_cast<int64_t>(episode.p1.size()); ++i) {
    Tensor v1 = embedding_for(ds, episode.p1[static_cast<size_t>(i)], provider);
    for (int64_t j = 0; j < n2; ++j) {
      Tensor v2 = embedding_for(ds, episode.p2[static_cast<size_t>(j)], provider);
      for (int64_t k = 0; k < provider.dim(); ++k) {
        averaged.at(i * n2 + j, k) = 0.5 * (v1[k] + v2[k]);
      }
    }
  }

  ParamTree params;
  rng::Engine init_eng = rng::make_engine(rng::uniform_int(eng, 0, INT64_MAX));
  auto xavier = [&](Shape shape) {
    Tensor t = Tensor::zeros(shape);
    double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng::uniform(init_eng, -bound, bound);
    return t;
  };
  params.set("mlp.w1", xavier({c, hidden}));
  params.set("mlp.b1", Tensor::zeros({hidden}));
  params.set("mlp.w2", xavier({hidden, embed_dim}));
  params.set("mlp.b2", Tensor::zeros({embed_dim}));
  params.set("comp.w", xavier({provider.dim(), embed_dim}));
  params.set("comp.b", Tensor::zeros({embed_dim}));

  auto scores_for = [&](Graph& g, const VarTree& vars, Var feats) {
    Var comp_emb = affine(g.value(averaged), vars.at("comp.w"),
                          reshape(vars.at("comp.b"), {1, embed_dim}));  // [grid, e]
    Var h = relu(affine(feats, vars.at("mlp.w1"), reshape(vars.at("mlp.b1"), {1, hidden})));
    Var e = affine(h, vars.at("mlp.w2"), reshape(vars.at("mlp.b2"), {1, embed_dim}));
    return matmul(e, transpose(comp_emb));  // [B, grid]
  };

  BatchCycler cycler(static_cast<int64_t>(episode.support.size()), eng);
  for (int64_t it = 0; it < cfg.iters; ++it) {
    std::vector<int64_t> batch = cycler.next(cfg.batch);
    Tensor rows = gather_feature_rows(episode, cache, batch);
    Tensor targets = Tensor::zeros({static_cast<int64_t>(batch.size()), grid});
    for (size_t i = 0; i < batch.size(); ++i) {
      const Composition& comp = episode.support[static_cast<size_t>(batch[i])].second;
      targets.at(static_cast<int64_t>(i), episode.grid_index(comp)) = 1.0;
    }
    Graph g;
    VarTree vars(g, params);
    Var loss = mean_cross_entropy_rows(scores_for(g, vars, g.value(rows)), g.value(targets));
    std::vector<Var> grads = g.backward(loss, vars.vars());
    size_t gi = 0;
    for (auto& [name, p] : params) {
      p.add_scaled(p, -cfg.lr * cfg.weight_decay);
      p.add_scaled(grads[gi++].value(), -cfg.lr);
    }
  }

  Graph g;
  VarTree vars(g, params);
  std::vector<std::pair<int64_t, Composition>> query = episode.query;
  Tensor feats = Tensor::zeros({static_cast<int64_t>(query.size()), c});
  for (size_t i = 0; i < query.size(); ++i) {
    const Tensor& p = cache.pooled(query[i].first);
    for (int64_t k = 0; k < c; ++k) feats.at(static_cast<int64_t>(i), k) = p[k];
  }
  Tensor scores = scores_for(g, vars, g.value(feats)).value();
  std::vector<Composition> predictions;
  predictions.reserve(query.size());
  for (int64_t row = 0; row < scores.dim(0); ++row) {
    int64_t best = 0;
    for (int64_t col = 1; col < scores.dim(1); ++col) {
      if (scores.at(row, col) > scores.at(row, best)) best = col;
    }
    predictions.push_back(episode.grid_composition(best));
  }
  return predictions;
}

}  // namespace czsl
