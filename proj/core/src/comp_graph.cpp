#include "czsl/comp_graph.hpp"

#include <cmath>

#include "czsl/errors.hpp"

namespace czsl {

CompGraph build_graph(const std::vector<int32_t>& p1, const std::vector<int32_t>& p2,
                      const Dataset& ds, const EmbeddingProvider& provider) {
  if (p1.empty() || p2.empty()) throw DataError("build_graph: primitive sets must be nonempty");
  CompGraph g;
  g.p1 = p1;
  g.p2 = p2;
  const int64_t h = g.size();
  const int64_t d_w = provider.dim();

  g.adjacency = Tensor::zeros({h, h});
  for (int64_t i = 0; i < h; ++i) g.adjacency.at(i, i) = 1.0;

  g.features0 = Tensor::zeros({h, d_w});
  std::vector<Tensor> emb1, emb2;
  for (int32_t id : p1) emb1.push_back(embedding_for(ds, id, provider));
  for (int32_t id : p2) emb2.push_back(embedding_for(ds, id, provider));
  for (int64_t i = 0; i < g.n1(); ++i) {
    for (int64_t k = 0; k < d_w; ++k) g.features0.at(g.p1_row(i), k) = emb1[static_cast<size_t>(i)][k];
  }
  for (int64_t j = 0; j < g.n2(); ++j) {
    for (int64_t k = 0; k < d_w; ++k) g.features0.at(g.p2_row(j), k) = emb2[static_cast<size_t>(j)][k];
  }

  for (int64_t i = 0; i < g.n1(); ++i) {
    for (int64_t j = 0; j < g.n2(); ++j) {
      int64_t row = g.comp_row(i, j);
      g.adjacency.at(row, g.p1_row(i)) = 1.0;
      g.adjacency.at(g.p1_row(i), row) = 1.0;
      g.adjacency.at(row, g.p2_row(j)) = 1.0;
      g.adjacency.at(g.p2_row(j), row) = 1.0;
      for (int64_t k = 0; k < d_w; ++k) {
        g.features0.at(row, k) =
            0.5 * (emb1[static_cast<size_t>(i)][k] + emb2[static_cast<size_t>(j)][k]);
      }
    }
  }

  g.degree = Tensor::zeros({h});
  for (int64_t i = 0; i < h; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < h; ++j) acc += g.adjacency.at(i, j);
    g.degree[i] = acc;
  }
  return g;
}

Tensor normalize_adjacency(const Tensor& adjacency, const Tensor& degree) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw ShapeError("normalize_adjacency: adjacency must be square, got " +
                     shape_str(adjacency.shape()));
  }
  int64_t h = adjacency.dim(0);
  if (degree.size() != h) {
    throw ShapeError("normalize_adjacency: degree size " + std::to_string(degree.size()) +
                     " vs " + std::to_string(h) + " nodes");
  }
  Tensor out = Tensor::zeros({h, h});
  for (int64_t i = 0; i < h; ++i) {
    for (int64_t j = 0; j < h; ++j) {
      if (adjacency.at(i, j) != 0.0) {
        out.at(i, j) = adjacency.at(i, j) / std::sqrt(degree[i] * degree[j]);
      }
    }
  }
  return out;
}

ParamTree init_gcn_params(const std::vector<int64_t>& dims, uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("gcn: need at least one layer");
  ParamTree params;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    int64_t fan_in = dims[l];
    int64_t fan_out = dims[l + 1];
    rng::Engine eng = rng::make_engine(rng::derive_seed(seed, "gcn.w" + std::to_string(l)));
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor w = Tensor::zeros({fan_in, fan_out});
    for (int64_t i = 0; i < w.size(); ++i) w[i] = rng::uniform(eng, -bound, bound);
    params.set("gcn.w" + std::to_string(l), std::move(w));
  }
  return params;
}

Var gcn_forward(Graph& g, Var adj_norm, Var features0, const std::vector<Var>& layer_weights) {
  (void)g;
  if (layer_weights.empty()) throw ConfigError("gcn_forward: no layers");
  Var v = features0;
  for (size_t l = 0; l < layer_weights.size(); ++l) {
    v = matmul(matmul(adj_norm, v), layer_weights[l]);
    if (l + 1 < layer_weights.size()) v = relu(v);
  }
  return v;
}

Tensor gcn_forward(const CompGraph& graph, const ParamTree& params) {
  Graph g;
  Var adj = g.value(normalize_adjacency(graph.adjacency, graph.degree));
  Var feats = g.value(graph.features0);
  std::vector<Var> weights;
  for (size_t l = 0; params.contains("gcn.w" + std::to_string(l)); ++l) {
    weights.push_back(g.value(params.at("gcn.w" + std::to_string(l))));
  }
  return gcn_forward(g, adj, feats, weights).value();
}

}  // namespace czsl
