#pragma once

#include "czsl/autodiff.hpp"
#include "czsl/dataset.hpp"
#include "czsl/param_tree.hpp"

namespace czsl {

/// Per-episode graph over n1 + n2 primitive nodes and one node per grid cell
/// (all n1*n2 potential pairs, existent or not). Composition nodes link to
/// exactly their two primitives; every node has a self-loop.
///
/// Node ordering: p1 primitives in episode order, then p2 primitives, then
/// compositions row-major over (p1 index, p2 index).
struct CompGraph {
  std::vector<int32_t> p1;
  std::vector<int32_t> p2;
  Tensor adjacency;  // [H,H], binary, symmetric, unit diagonal
  Tensor degree;     // [H], row sums of adjacency
  Tensor features0;  // [H, d_w], primitives from the provider, pairs averaged

  int64_t n1() const { return static_cast<int64_t>(p1.size()); }
  int64_t n2() const { return static_cast<int64_t>(p2.size()); }
  int64_t size() const { return n1() + n2() + n1() * n2(); }
  int64_t p1_row(int64_t i) const { return i; }
  int64_t p2_row(int64_t j) const { return n1() + j; }
  int64_t comp_row(int64_t i, int64_t j) const { return n1() + n2() + i * n2() + j; }
};

CompGraph build_graph(const std::vector<int32_t>& p1, const std::vector<int32_t>& p2,
                      const Dataset& ds, const EmbeddingProvider& provider);

/// Symmetric normalization D^{-1/2} A D^{-1/2}.
Tensor normalize_adjacency(const Tensor& adjacency, const Tensor& degree);

/// Layer dimensions chain, e.g. {32, 64, 64}; weights live in a ParamTree as
/// "gcn.w0", "gcn.w1", ...
ParamTree init_gcn_params(const std::vector<int64_t>& dims, uint64_t seed);

/// Propagation on an existing tape: relu between layers, final layer linear.
/// `adj_norm` is the normalized adjacency as a constant.
Var gcn_forward(Graph& g, Var adj_norm, Var features0, const std::vector<Var>& layer_weights);

/// Value-level wrapper: runs the propagation on a scratch tape.
Tensor gcn_forward(const CompGraph& graph, const ParamTree& params);

}  // namespace czsl
