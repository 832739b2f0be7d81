#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "czsl/tensor.hpp"

namespace czsl {

class Graph;

/// Handle to a node on a Graph tape. Cheap to copy; valid as long as the
/// graph is alive.
struct Var {
  Graph* graph = nullptr;
  int32_t id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

namespace detail {

enum class Op : uint8_t {
  kValue,
  kParam,
  kDetach,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,
  kAddConst,
  kMatmul,
  kTranspose,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kSumAll,
  kBroadcastScalar,
  kRowSum,
  kColSum,
  kBcastCols,
  kBcastRows,
  kRepeatRows,
  kTileRows,
  kSumRowGroups,
  kSumRowBlocks,
  kGatherRows,
  kScatterRows,
  kConcat0,
  kSliceRows,
  kPadRows,
  kReshape,
  kConv2d,
  kConv2dGradInput,
  kConv2dGradWeight,
  kAvgPool2,
  kAvgUnpool2,
};

struct Node {
  Op op;
  bool requires_grad = false;
  int32_t parents[2] = {-1, -1};
  int n_parents = 0;
  Tensor value;
  double aux_scalar = 0.0;                            // scale factor / added constant
  std::vector<int64_t> aux;                           // op geometry
  std::shared_ptr<const std::vector<int64_t>> index;  // gather/scatter rows
};

}  // namespace detail

/// Dynamic tape for reverse-mode differentiation over dense tensors.
///
/// Nodes are recorded in topological (creation) order. backward() emits the
/// gradient computation as new tape nodes, so gradients are themselves
/// differentiable; this is what makes the exact second-order training mode
/// possible. Evaluation is single-threaded and deterministic: the same
/// sequence of ops on the same values yields bit-identical results.
class Graph {
public:
  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant leaf: no gradient flows into it.
  Var value(Tensor v);
  /// Differentiable leaf.
  Var param(Tensor v);

  const Tensor& val(const Var& v) const;
  size_t node_count() const { return nodes_.size(); }

  /// Gradients of a scalar `out` w.r.t. each entry of `wrt`, as tape nodes.
  /// Entries unreachable from `out` get zero tensors.
  std::vector<Var> backward(Var out, const std::vector<Var>& wrt);

  /// Smallest |input element| seen by any relu on this tape; +inf when no
  /// relu ran. Used to detect kink crossings in finite-difference checks.
  double min_relu_input_abs() const { return min_relu_abs_; }

  // Internal: used by the op free functions.
  Var make(detail::Node node);
  const detail::Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }

private:
  std::vector<detail::Node> nodes_;
  double min_relu_abs_ = std::numeric_limits<double>::infinity();

  friend Var relu(Var);
};

// ---- primitive ops ----

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var vdiv(Var a, Var b);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var vexp(Var a);
Var vlog(Var a);
Var sum_all(Var a);                          // -> scalar
Var broadcast_scalar(Var s, Shape shape);    // scalar -> full tensor
Var row_sum(Var a);                          // [m,n] -> [m,1]
Var col_sum(Var a);                          // [m,n] -> [1,n]
Var bcast_cols(Var a, int64_t n);            // [m,1] -> [m,n]
Var bcast_rows(Var a, int64_t m);            // [1,n] -> [m,n]
Var repeat_rows(Var a, int64_t r);           // row i -> rows i*r..i*r+r-1
Var tile_rows(Var a, int64_t t);             // whole block repeated t times
Var sum_row_groups(Var a, int64_t r);        // inverse reduction of repeat_rows
Var sum_row_blocks(Var a, int64_t t);        // inverse reduction of tile_rows
Var gather_rows(Var a, std::shared_ptr<const std::vector<int64_t>> idx);
Var scatter_rows(Var a, std::shared_ptr<const std::vector<int64_t>> idx, int64_t out_rows);
Var concat0(Var a, Var b);                   // along axis 0
Var slice_rows(Var a, int64_t start, int64_t len);
Var pad_rows(Var a, int64_t before, int64_t total);
Var reshape(Var a, Shape shape);
Var detach(Var a);                           // value passes, gradient stops
Var conv2d(Var x, Var w, int64_t stride, int64_t pad);  // x [Ci,H,W], w [Co,Ci,kh,kw]
Var avg_pool2(Var x);                        // 2x2 mean pool, [C,H,W] -> [C,H/2,W/2]

// ---- composites ----

inline Var neg(Var a) { return scale(a, -1.0); }
Var mean_all(Var a);
/// x [m,k] @ w [k,n] + row-broadcast bias [1,n].
Var affine(Var x, Var w, Var b);
/// Spatial mean of [C,H,W] -> [C].
Var gap_spatial(Var x);
/// Channel gate: [C,H,W] scaled per-channel by [C].
Var mul_channels(Var x, Var gate);
/// Row-wise logsumexp of [m,n] -> [m,1]; the row max is treated as a constant.
Var row_logsumexp(Var m);
/// Mean over rows of cross-entropy between score rows [B,C] and target rows
/// [B,C] (each target row a distribution).
Var mean_cross_entropy_rows(Var scores, Var targets);
/// Vector softmax (stable).
Var softmax_vec(Var v);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

}  // namespace czsl
