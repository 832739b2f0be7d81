#pragma once

#include <memory>

#include "czsl/backbone.hpp"
#include "czsl/comp_graph.hpp"
#include "czsl/episode.hpp"
#include "czsl/tape_function.hpp"

namespace czsl {

/// Episodic model dimensions. The trainable tree has three groups:
///   gcn.*    graph propagation weights
///   corr1/2.* the two correlation-map branches (not shared across kinds)
///   embed.*  the feature embedder
struct ArchConfig {
  int64_t embedding_dim = 32;      // d_w, node feature input
  int64_t gcn_hidden = 64;
  int64_t shared_dim = 64;         // d, output of both pathways
  int64_t backbone_channels = 32;  // c_ch
  int64_t corr_hidden = 64;
  int64_t embed_hidden = 64;

  std::vector<int64_t> gcn_dims() const { return {embedding_dim, gcn_hidden, shared_dim}; }
};

ParamTree init_theta(const ArchConfig& arch, uint64_t seed);

/// Constants for scoring one batch of samples against one episode grid.
struct ScoreBatch {
  Tensor pooled;     // [B, c_ch] pooled backbone features
  Tensor adj_norm;   // [H, H]
  Tensor features0;  // [H, d_w]
  std::shared_ptr<const std::vector<int64_t>> comp_rows;  // grid order
  std::shared_ptr<const std::vector<int64_t>> p1_rows;    // per grid cell
  std::shared_ptr<const std::vector<int64_t>> p2_rows;
  int64_t n_comps = 0;
};

/// ScoreBatch for a list of samples of one episode, features via `pooled`
/// rows aligned with `sample_ids`.
ScoreBatch make_score_batch(const CompGraph& graph, Tensor pooled_feats);

/// Compatibility scores [B, C] for every sample x grid cell: GCN node
/// embeddings, per-cell correlation gate from the two primitive embeddings,
/// gated pooled features through the embedder, dot with the cell embedding.
Var build_scores(Graph& g, const VarTree& theta, const ScoreBatch& batch, const ArchConfig& arch);

/// Mean cross-entropy of build_scores against target rows [B, C].
Var build_set_loss(Graph& g, const VarTree& theta, const ScoreBatch& batch, Var targets,
                   const ArchConfig& arch);

/// Correlation gate in (0,1)^c for one feature map and one pair of primitive
/// embeddings.
Tensor correlation_map(const Tensor& feature_map, const Tensor& v_p1, const Tensor& v_p2,
                       const ParamTree& theta, const ArchConfig& arch);

/// Scores for one image over the episode grid, ordered like the graph's
/// composition nodes. `gcn_output` is the [H, d] node embedding matrix.
Tensor score_all(const Tensor& image, const CompGraph& graph, const Tensor& gcn_output,
                 const ParamTree& theta, const Backbone& backbone, const ArchConfig& arch);

/// Cross-entropy of a score vector against a distribution over the grid.
/// Throws NumericError unless the target is a distribution.
double episode_loss(const Tensor& scores, const Tensor& target);

/// Stable softmax of a score vector (values).
Tensor softmax(const Tensor& scores);

/// Lowest-index argmax.
int64_t argmax_index(const Tensor& scores);

}  // namespace czsl
