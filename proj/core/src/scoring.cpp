#include "czsl/scoring.hpp"

#include <cmath>

#include "czsl/errors.hpp"
#include "czsl/rng.hpp"

namespace czsl {

namespace {

Tensor xavier(Shape shape, uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  int64_t fan_in = shape[0];
  int64_t fan_out = shape.size() > 1 ? shape[1] : shape[0];
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  rng::Engine eng = rng::make_engine(seed);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng::uniform(eng, -bound, bound);
  return t;
}

struct CorrBranchVars {
  Var w_feat;  // [c, hidden] rows of w1 acting on pooled features
  Var w_emb;   // [d, hidden] rows of w1 acting on the primitive embedding
  Var b1;
  Var w2;
  Var b2;
};

CorrBranchVars corr_branch(const VarTree& theta, const std::string& prefix, int64_t c_ch) {
  Var w1 = theta.at(prefix + ".w1");
  int64_t d = w1.value().dim(0) - c_ch;
  return {slice_rows(w1, 0, c_ch), slice_rows(w1, c_ch, d), theta.at(prefix + ".b1"),
          theta.at(prefix + ".w2"), theta.at(prefix + ".b2")};
}

// Shared tail: everything downstream of the node embeddings.
Var scores_from_nodes(Graph& g, const VarTree& theta, Var node_embeddings,
                      const ScoreBatch& batch, const ArchConfig& arch) {
  const int64_t n_samples = batch.pooled.dim(0);
  const int64_t n_comps = batch.n_comps;
  const int64_t c_ch = arch.backbone_channels;

  Var pooled = g.value(batch.pooled);  // [B, c]
  Var v_p1 = gather_rows(node_embeddings, batch.p1_rows);    // [C, d]
  Var v_p2 = gather_rows(node_embeddings, batch.p2_rows);    // [C, d]
  Var v_comp = gather_rows(node_embeddings, batch.comp_rows);  // [C, d]

  // Correlation gate per (sample, cell), rows indexed b*C + i.
  Var pre_gate;
  bool first = true;
  const std::pair<const char*, Var> branches[] = {{"corr1", v_p1}, {"corr2", v_p2}};
  for (const auto& [prefix, v_prim] : branches) {
    CorrBranchVars br = corr_branch(theta, prefix, c_ch);
    Var feat_part = matmul(pooled, br.w_feat);                        // [B, hidden]
    Var emb_part = matmul(v_prim, br.w_emb);                          // [C, hidden]
    emb_part = add(emb_part, bcast_rows(reshape(br.b1, {1, arch.corr_hidden}), n_comps));
    Var hidden = relu(add(repeat_rows(feat_part, n_comps), tile_rows(emb_part, n_samples)));
    Var out = matmul(hidden, br.w2);                                  // [BC, c]
    out = add(out, bcast_rows(reshape(br.b2, {1, c_ch}), n_samples * n_comps));
    pre_gate = first ? out : add(pre_gate, out);
    first = false;
  }
  Var gate = sigmoid(pre_gate);  // [BC, c]

  // Channel gating commutes with spatial pooling, so the gate applies
  // directly to the pooled features.
  Var gated = mul(gate, repeat_rows(pooled, n_comps));  // [BC, c]

  Var h = relu(add(matmul(gated, theta.at("embed.w1")),
                   bcast_rows(reshape(theta.at("embed.b1"), {1, arch.embed_hidden}),
                              n_samples * n_comps)));
  Var e = add(matmul(h, theta.at("embed.w2")),
              bcast_rows(reshape(theta.at("embed.b2"), {1, arch.shared_dim}),
                         n_samples * n_comps));  // [BC, d]

  Var flat = row_sum(mul(e, tile_rows(v_comp, n_samples)));  // [BC, 1]
  return reshape(flat, {n_samples, n_comps});
}

std::vector<Var> gcn_weights(const VarTree& theta) {
  std::vector<Var> out;
  for (size_t l = 0;; ++l) {
    std::string name = "gcn.w" + std::to_string(l);
    bool found = false;
    for (const auto& [leaf_name, v] : theta.leaves()) {
      if (leaf_name == name) {
        out.push_back(v);
        found = true;
        break;
      }
    }
    if (!found) break;
  }
  if (out.empty()) throw DataError("theta: no gcn layers found");
  return out;
}

}  // namespace

ParamTree init_theta(const ArchConfig& arch, uint64_t seed) {
  ParamTree theta = init_gcn_params(arch.gcn_dims(), rng::derive_seed(seed, "gcn"));
  const int64_t c = arch.backbone_channels;
  const int64_t d = arch.shared_dim;
  auto put = [&](const std::string& name, Shape shape) {
    theta.set(name, xavier(std::move(shape), rng::derive_seed(seed, name)));
  };
  for (const char* prefix : {"corr1", "corr2"}) {
    put(std::string(prefix) + ".w1", {c + d, arch.corr_hidden});
    theta.set(std::string(prefix) + ".b1", Tensor::zeros({arch.corr_hidden}));
    put(std::string(prefix) + ".w2", {arch.corr_hidden, c});
    theta.set(std::string(prefix) + ".b2", Tensor::zeros({c}));
  }
  put("embed.w1", {c, arch.embed_hidden});
  theta.set("embed.b1", Tensor::zeros({arch.embed_hidden}));
  put("embed.w2", {arch.embed_hidden, d});
  theta.set("embed.b2", Tensor::zeros({d}));
  return theta;
}

ScoreBatch make_score_batch(const CompGraph& graph, Tensor pooled_feats) {
  ScoreBatch batch;
  batch.pooled = std::move(pooled_feats);
  batch.adj_norm = normalize_adjacency(graph.adjacency, graph.degree);
  batch.features0 = graph.features0;
  auto comp_rows = std::make_shared<std::vector<int64_t>>();
  auto p1_rows = std::make_shared<std::vector<int64_t>>();
  auto p2_rows = std::make_shared<std::vector<int64_t>>();
  for (int64_t i = 0; i < graph.n1(); ++i) {
    for (int64_t j = 0; j < graph.n2(); ++j) {
      comp_rows->push_back(graph.comp_row(i, j));
      p1_rows->push_back(graph.p1_row(i));
      p2_rows->push_back(graph.p2_row(j));
    }
  }
  batch.n_comps = static_cast<int64_t>(comp_rows->size());
  batch.comp_rows = std::move(comp_rows);
  batch.p1_rows = std::move(p1_rows);
  batch.p2_rows = std::move(p2_rows);
  return batch;
}

Var build_scores(Graph& g, const VarTree& theta, const ScoreBatch& batch, const ArchConfig& arch) {
  Var adj = g.value(batch.adj_norm);
  Var feats = g.value(batch.features0);
  Var nodes = gcn_forward(g, adj, feats, gcn_weights(theta));
  return scores_from_nodes(g, theta, nodes, batch, arch);
}

Var build_set_loss(Graph& g, const VarTree& theta, const ScoreBatch& batch, Var targets,
                   const ArchConfig& arch) {
  Var scores = build_scores(g, theta, batch, arch);
  return mean_cross_entropy_rows(scores, targets);
}

Tensor correlation_map(const Tensor& feature_map, const Tensor& v_p1, const Tensor& v_p2,
                       const ParamTree& theta, const ArchConfig& arch) {
  if (feature_map.rank() != 3) {
    throw ShapeError("correlation_map: feature map must be [c,h,w], got " +
                     shape_str(feature_map.shape()));
  }
  Graph g;
  VarTree vars(g, theta);
  Var pooled = gap_spatial(g.value(feature_map));  // [c]
  Var pre;
  bool first = true;
  const std::pair<const char*, const Tensor*> branches[] = {{"corr1", &v_p1}, {"corr2", &v_p2}};
  for (const auto& [prefix, v_prim] : branches) {
    Var input = concat0(pooled, g.value(*v_prim));  // [c + d]
    Var w1 = vars.at(std::string(prefix) + ".w1");
    if (input.value().size() != w1.value().dim(0)) {
      throw ShapeError("correlation_map: input size " + std::to_string(input.value().size()) +
                       " vs branch weight rows " + std::to_string(w1.value().dim(0)));
    }
    Var row = reshape(input, {1, input.value().size()});
    Var hidden = relu(affine(row, w1, reshape(vars.at(std::string(prefix) + ".b1"),
                                              {1, arch.corr_hidden})));
    Var out = affine(hidden, vars.at(std::string(prefix) + ".w2"),
                     reshape(vars.at(std::string(prefix) + ".b2"), {1, arch.backbone_channels}));
    pre = first ? out : add(pre, out);
    first = false;
  }
  return reshape(sigmoid(pre), {arch.backbone_channels}).value();
}

Tensor score_all(const Tensor& image, const CompGraph& graph, const Tensor& gcn_output,
                 const ParamTree& theta, const Backbone& backbone, const ArchConfig& arch) {
  Tensor pooled = backbone.pooled(image);
  ScoreBatch batch = make_score_batch(graph, Tensor::from({1, pooled.size()},
                                                          std::vector<double>(pooled.data(),
                                                                              pooled.data() +
                                                                                  pooled.size())));
  Graph g;
  VarTree vars(g, theta);
  Var nodes = g.value(gcn_output);
  Var scores = scores_from_nodes(g, vars, nodes, batch, arch);
  return reshape(scores, {batch.n_comps}).value();
}

double episode_loss(const Tensor& scores, const Tensor& target) {
  if (!scores.same_shape(target)) {
    throw ShapeError("episode_loss: scores " + shape_str(scores.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  double mass = 0.0;
  for (int64_t i = 0; i < target.size(); ++i) {
    if (target[i] < 0.0) {
      throw NumericError("episode_loss: invalid distribution, negative target entry");
    }
    mass += target[i];
  }
  if (std::fabs(mass - 1.0) > 1e-9) {
    throw NumericError("episode_loss: invalid distribution, target mass " + std::to_string(mass));
  }
  double mx = scores[0];
  for (int64_t i = 1; i < scores.size(); ++i) mx = std::max(mx, scores[i]);
  double lse = 0.0;
  for (int64_t i = 0; i < scores.size(); ++i) lse += std::exp(scores[i] - mx);
  lse = mx + std::log(lse);
  double dot = 0.0;
  for (int64_t i = 0; i < scores.size(); ++i) dot += target[i] * scores[i];
  return lse - dot;
}

Tensor softmax(const Tensor& scores) {
  Tensor out = Tensor::zeros(scores.shape());
  double mx = scores[0];
  for (int64_t i = 1; i < scores.size(); ++i) mx = std::max(mx, scores[i]);
  double total = 0.0;
  for (int64_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - mx);
    total += out[i];
  }
  out.scale(1.0 / total);
  return out;
}

int64_t argmax_index(const Tensor& scores) {
  int64_t best = 0;
  for (int64_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace czsl
