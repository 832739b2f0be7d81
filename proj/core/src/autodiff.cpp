#include "czsl/autodiff.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>

namespace czsl {

using detail::Node;
using detail::Op;

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EigenRowMat>;
using ConstMapMat = Eigen::Map<const EigenRowMat>;

namespace {

void check_same_graph(const char* op, Var a, Var b) {
  if (a.graph != b.graph) {
    throw NumericError(std::string(op) + ": operands belong to different graphs");
  }
}

void check_valid(const char* op, Var a) {
  if (!a.valid()) throw NumericError(std::string(op) + ": invalid operand");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void check_rank(const char* op, const Tensor& a, int rank) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank-" + std::to_string(rank) +
                     " tensor, got shape " + shape_str(a.shape()));
  }
}

bool parents_require_grad(const Graph& g, std::initializer_list<Var> parents) {
  for (Var p : parents) {
    if (g.node(p.id).requires_grad) return true;
  }
  return false;
}

Node unary(Op op, Var a, Tensor value) {
  Node n;
  n.op = op;
  n.parents[0] = a.id;
  n.n_parents = 1;
  n.requires_grad = a.graph->node(a.id).requires_grad;
  n.value = std::move(value);
  return n;
}

Node binary(Op op, Var a, Var b, Tensor value) {
  Node n;
  n.op = op;
  n.parents[0] = a.id;
  n.parents[1] = b.id;
  n.n_parents = 2;
  n.requires_grad = parents_require_grad(*a.graph, {a, b});
  n.value = std::move(value);
  return n;
}

// Rows of a tensor when treated as a stack along axis 0 (vectors count
// elements, matrices count rows).
int64_t axis0_len(const Tensor& t) { return t.rank() == 0 ? 0 : t.dim(0); }
int64_t row_width(const Tensor& t) {
  int64_t w = 1;
  for (int i = 1; i < t.rank(); ++i) w *= t.dim(i);
  return w;
}

struct ConvGeom {
  int64_t ci, h, w;       // input
  int64_t co, kh, kw;     // kernel
  int64_t stride, pad;
  int64_t ho, wo;

  static ConvGeom from_aux(const std::vector<int64_t>& aux) {
    ConvGeom g{};
    g.ci = aux[0];
    g.h = aux[1];
    g.w = aux[2];
    g.co = aux[3];
    g.kh = aux[4];
    g.kw = aux[5];
    g.stride = aux[6];
    g.pad = aux[7];
    g.ho = aux[8];
    g.wo = aux[9];
    return g;
  }
  std::vector<int64_t> to_aux() const { return {ci, h, w, co, kh, kw, stride, pad, ho, wo}; }
};

// x [Ci,H,W] -> cols [Ci*kh*kw, Ho*Wo]
Tensor im2col(const Tensor& x, const ConvGeom& g) {
  Tensor cols = Tensor::zeros({g.ci * g.kh * g.kw, g.ho * g.wo});
  for (int64_t ci = 0; ci < g.ci; ++ci) {
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        int64_t row = (ci * g.kh + ki) * g.kw + kj;
        for (int64_t ho = 0; ho < g.ho; ++ho) {
          int64_t src_i = ho * g.stride + ki - g.pad;
          if (src_i < 0 || src_i >= g.h) continue;
          for (int64_t wo = 0; wo < g.wo; ++wo) {
            int64_t src_j = wo * g.stride + kj - g.pad;
            if (src_j < 0 || src_j >= g.w) continue;
            cols.at(row, ho * g.wo + wo) = x.at(ci, src_i, src_j);
          }
        }
      }
    }
  }
  return cols;
}

// cols [Ci*kh*kw, Ho*Wo] -> accumulate into x [Ci,H,W]
Tensor col2im(const Tensor& cols, const ConvGeom& g) {
  Tensor x = Tensor::zeros({g.ci, g.h, g.w});
  for (int64_t ci = 0; ci < g.ci; ++ci) {
    for (int64_t ki = 0; ki < g.kh; ++ki) {
      for (int64_t kj = 0; kj < g.kw; ++kj) {
        int64_t row = (ci * g.kh + ki) * g.kw + kj;
        for (int64_t ho = 0; ho < g.ho; ++ho) {
          int64_t src_i = ho * g.stride + ki - g.pad;
          if (src_i < 0 || src_i >= g.h) continue;
          for (int64_t wo = 0; wo < g.wo; ++wo) {
            int64_t src_j = wo * g.stride + kj - g.pad;
            if (src_j < 0 || src_j >= g.w) continue;
            x.at(ci, src_i, src_j) += cols.at(row, ho * g.wo + wo);
          }
        }
      }
    }
  }
  return x;
}

}  // namespace

const Tensor& Var::value() const {
  if (!valid()) throw NumericError("var: dereferencing an invalid handle");
  return graph->val(*this);
}

Var Graph::value(Tensor v) {
  Node n;
  n.op = Op::kValue;
  n.value = std::move(v);
  return make(std::move(n));
}

Var Graph::param(Tensor v) {
  Node n;
  n.op = Op::kParam;
  n.requires_grad = true;
  n.value = std::move(v);
  return make(std::move(n));
}

const Tensor& Graph::val(const Var& v) const {
  return nodes_[static_cast<size_t>(v.id)].value;
}

Var Graph::make(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

// ---- ops ----

Var add(Var a, Var b) {
  check_valid("add", a);
  check_valid("add", b);
  check_same_graph("add", a, b);
  check_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_scaled(b.value(), 1.0);
  return a.graph->make(binary(Op::kAdd, a, b, std::move(out)));
}

Var sub(Var a, Var b) {
  check_valid("sub", a);
  check_valid("sub", b);
  check_same_graph("sub", a, b);
  check_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  out.add_scaled(b.value(), -1.0);
  return a.graph->make(binary(Op::kSub, a, b, std::move(out)));
}

Var mul(Var a, Var b) {
  check_valid("mul", a);
  check_valid("mul", b);
  check_same_graph("mul", a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  check_same_shape("mul", ta, tb);
  Tensor out = Tensor::zeros(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] * tb[i];
  return a.graph->make(binary(Op::kMul, a, b, std::move(out)));
}

Var vdiv(Var a, Var b) {
  check_valid("div", a);
  check_valid("div", b);
  check_same_graph("div", a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  check_same_shape("div", ta, tb);
  Tensor out = Tensor::zeros(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = ta[i] / tb[i];
  return a.graph->make(binary(Op::kDiv, a, b, std::move(out)));
}

Var scale(Var a, double c) {
  check_valid("scale", a);
  Tensor out = a.value();
  out.scale(c);
  Node n = unary(Op::kScale, a, std::move(out));
  n.aux_scalar = c;
  return a.graph->make(std::move(n));
}

Var add_const(Var a, double c) {
  check_valid("add_const", a);
  Tensor out = a.value();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += c;
  Node n = unary(Op::kAddConst, a, std::move(out));
  n.aux_scalar = c;
  return a.graph->make(std::move(n));
}

Var matmul(Var a, Var b) {
  check_valid("matmul", a);
  check_valid("matmul", b);
  check_same_graph("matmul", a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  check_rank("matmul", ta, 2);
  check_rank("matmul", tb, 2);
  if (ta.dim(1) != tb.dim(0)) {
    throw ShapeError("matmul: inner dimensions " + shape_str(ta.shape()) + " x " +
                     shape_str(tb.shape()));
  }
  Tensor out = Tensor::zeros({ta.dim(0), tb.dim(1)});
  ConstMapMat ma(ta.data(), ta.dim(0), ta.dim(1));
  ConstMapMat mb(tb.data(), tb.dim(0), tb.dim(1));
  MapMat mo(out.data(), out.dim(0), out.dim(1));
  mo.noalias() = ma * mb;
  return a.graph->make(binary(Op::kMatmul, a, b, std::move(out)));
}

Var transpose(Var a) {
  check_valid("transpose", a);
  const Tensor& ta = a.value();
  check_rank("transpose", ta, 2);
  Tensor out = Tensor::zeros({ta.dim(1), ta.dim(0)});
  for (int64_t i = 0; i < ta.dim(0); ++i) {
    for (int64_t j = 0; j < ta.dim(1); ++j) out.at(j, i) = ta.at(i, j);
  }
  return a.graph->make(unary(Op::kTranspose, a, std::move(out)));
}

Var relu(Var a) {
  check_valid("relu", a);
  const Tensor& ta = a.value();
  Tensor out = Tensor::zeros(ta.shape());
  double min_abs = a.graph->min_relu_abs_;
  for (int64_t i = 0; i < ta.size(); ++i) {
    out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
    min_abs = std::min(min_abs, std::fabs(ta[i]));
  }
  a.graph->min_relu_abs_ = min_abs;
  return a.graph->make(unary(Op::kRelu, a, std::move(out)));
}

Var sigmoid(Var a) {
  check_valid("sigmoid", a);
  const Tensor& ta = a.value();
  Tensor out = Tensor::zeros(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) {
    double x = ta[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  return a.graph->make(unary(Op::kSigmoid, a, std::move(out)));
}

Var vexp(Var a) {
  check_valid("exp", a);
  const Tensor& ta = a.value();
  Tensor out = Tensor::zeros(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = std::exp(ta[i]);
  return a.graph->make(unary(Op::kExp, a, std::move(out)));
}

Var vlog(Var a) {
  check_valid("log", a);
  const Tensor& ta = a.value();
  Tensor out = Tensor::zeros(ta.shape());
  for (int64_t i = 0; i < ta.size(); ++i) out[i] = std::log(ta[i]);
  return a.graph->make(unary(Op::kLog, a, std::move(out)));
}

Var sum_all(Var a) {
  check_valid("sum_all", a);
  return a.graph->make(unary(Op::kSumAll, a, Tensor::scalar(a.value().sum())));
}

Var broadcast_scalar(Var s, Shape shape) {
  check_valid("broadcast_scalar", s);
  if (s.value().size() != 1) {
    throw ShapeError("broadcast_scalar: source has shape " + shape_str(s.value().shape()));
  }
  return s.graph->make(unary(Op::kBroadcastScalar, s, Tensor::full(std::move(shape), s.value().item())));
}

Var row_sum(Var a) {
  check_valid("row_sum", a);
  const Tensor& ta = a.value();
  check_rank("row_sum", ta, 2);
  Tensor out = Tensor::zeros({ta.dim(0), 1});
  for (int64_t i = 0; i < ta.dim(0); ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < ta.dim(1); ++j) acc += ta.at(i, j);
    out.at(i, 0) = acc;
  }
  return a.graph->make(unary(Op::kRowSum, a, std::move(out)));
}

Var col_sum(Var a) {
  check_valid("col_sum", a);
  const Tensor& ta = a.value();
  check_rank("col_sum", ta, 2);
  Tensor out = Tensor::zeros({1, ta.dim(1)});
  for (int64_t i = 0; i < ta.dim(0); ++i) {
    for (int64_t j = 0; j < ta.dim(1); ++j) out.at(0, j) += ta.at(i, j);
  }
  return a.graph->make(unary(Op::kColSum, a, std::move(out)));
}

Var bcast_cols(Var a, int64_t n) {
  check_valid("bcast_cols", a);
  const Tensor& ta = a.value();
  check_rank("bcast_cols", ta, 2);
  if (ta.dim(1) != 1) throw ShapeError("bcast_cols: source must be [m,1], got " + shape_str(ta.shape()));
  Tensor out = Tensor::zeros({ta.dim(0), n});
  for (int64_t i = 0; i < ta.dim(0); ++i) {
    for (int64_t j = 0; j < n; ++j) out.at(i, j) = ta.at(i, 0);
  }
  return a.graph->make(unary(Op::kBcastCols, a, std::move(out)));
}

Var bcast_rows(Var a, int64_t m) {
  check_valid("bcast_rows", a);
  const Tensor& ta = a.value();
  check_rank("bcast_rows", ta, 2);
  if (ta.dim(0) != 1) throw ShapeError("bcast_rows: source must be [1,n], got " + shape_str(ta.shape()));
  Tensor out = Tensor::zeros({m, ta.dim(1)});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < ta.dim(1); ++j) out.at(i, j) = ta.at(0, j);
  }
  return a.graph->make(unary(Op::kBcastRows, a, std::move(out)));
}

Var repeat_rows(Var a, int64_t r) {
  check_valid("repeat_rows", a);
  const Tensor& ta = a.value();
  check_rank("repeat_rows", ta, 2);
  if (r < 1) throw ShapeError("repeat_rows: repeat count must be >= 1");
  int64_t m = ta.dim(0), w = ta.dim(1);
  Tensor out = Tensor::zeros({m * r, w});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t q = 0; q < r; ++q) {
      for (int64_t j = 0; j < w; ++j) out.at(i * r + q, j) = ta.at(i, j);
    }
  }
  Node n = unary(Op::kRepeatRows, a, std::move(out));
  n.aux = {r};
  return a.graph->make(std::move(n));
}

Var tile_rows(Var a, int64_t t) {
  check_valid("tile_rows", a);
  const Tensor& ta = a.value();
  check_rank("tile_rows", ta, 2);
  if (t < 1) throw ShapeError("tile_rows: tile count must be >= 1");
  int64_t m = ta.dim(0), w = ta.dim(1);
  Tensor out = Tensor::zeros({m * t, w});
  for (int64_t k = 0; k < t; ++k) {
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < w; ++j) out.at(k * m + i, j) = ta.at(i, j);
    }
  }
  Node n = unary(Op::kTileRows, a, std::move(out));
  n.aux = {t};
  return a.graph->make(std::move(n));
}

Var sum_row_groups(Var a, int64_t r) {
  check_valid("sum_row_groups", a);
  const Tensor& ta = a.value();
  check_rank("sum_row_groups", ta, 2);
  if (r < 1 || ta.dim(0) % r != 0) {
    throw ShapeError("sum_row_groups: rows " + std::to_string(ta.dim(0)) +
                     " not divisible by group size " + std::to_string(r));
  }
  int64_t m = ta.dim(0) / r, w = ta.dim(1);
  Tensor out = Tensor::zeros({m, w});
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t q = 0; q < r; ++q) {
      for (int64_t j = 0; j < w; ++j) out.at(i, j) += ta.at(i * r + q, j);
    }
  }
  Node n = unary(Op::kSumRowGroups, a, std::move(out));
  n.aux = {r};
  return a.graph->make(std::move(n));
}

Var sum_row_blocks(Var a, int64_t t) {
  check_valid("sum_row_blocks", a);
  const Tensor& ta = a.value();
  check_rank("sum_row_blocks", ta, 2);
  if (t < 1 || ta.dim(0) % t != 0) {
    throw ShapeError("sum_row_blocks: rows " + std::to_string(ta.dim(0)) +
                     " not divisible by block count " + std::to_string(t));
  }
  int64_t m = ta.dim(0) / t, w = ta.dim(1);
  Tensor out = Tensor::zeros({m, w});
  for (int64_t k = 0; k < t; ++k) {
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t j = 0; j < w; ++j) out.at(i, j) += ta.at(k * m + i, j);
    }
  }
  Node n = unary(Op::kSumRowBlocks, a, std::move(out));
  n.aux = {t};
  return a.graph->make(std::move(n));
}

Var gather_rows(Var a, std::shared_ptr<const std::vector<int64_t>> idx) {
  check_valid("gather_rows", a);
  const Tensor& ta = a.value();
  check_rank("gather_rows", ta, 2);
  int64_t m = ta.dim(0), w = ta.dim(1);
  Tensor out = Tensor::zeros({static_cast<int64_t>(idx->size()), w});
  for (size_t k = 0; k < idx->size(); ++k) {
    int64_t src = (*idx)[k];
    if (src < 0 || src >= m) throw ShapeError("gather_rows: index out of range");
    for (int64_t j = 0; j < w; ++j) out.at(static_cast<int64_t>(k), j) = ta.at(src, j);
  }
  Node n = unary(Op::kGatherRows, a, std::move(out));
  n.aux = {m};
  n.index = std::move(idx);
  return a.graph->make(std::move(n));
}

Var scatter_rows(Var a, std::shared_ptr<const std::vector<int64_t>> idx, int64_t out_rows) {
  check_valid("scatter_rows", a);
  const Tensor& ta = a.value();
  check_rank("scatter_rows", ta, 2);
  if (ta.dim(0) != static_cast<int64_t>(idx->size())) {
    throw ShapeError("scatter_rows: row count does not match index count");
  }
  int64_t w = ta.dim(1);
  Tensor out = Tensor::zeros({out_rows, w});
  for (size_t k = 0; k < idx->size(); ++k) {
    int64_t dst = (*idx)[k];
    if (dst < 0 || dst >= out_rows) throw ShapeError("scatter_rows: index out of range");
    for (int64_t j = 0; j < w; ++j) out.at(dst, j) += ta.at(static_cast<int64_t>(k), j);
  }
  Node n = unary(Op::kScatterRows, a, std::move(out));
  n.aux = {out_rows};
  n.index = std::move(idx);
  return a.graph->make(std::move(n));
}

Var concat0(Var a, Var b) {
  check_valid("concat0", a);
  check_valid("concat0", b);
  check_same_graph("concat0", a, b);
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  if (ta.rank() != tb.rank() || ta.rank() < 1 || ta.rank() > 2 ||
      (ta.rank() == 2 && ta.dim(1) != tb.dim(1))) {
    throw ShapeError("concat0: incompatible shapes " + shape_str(ta.shape()) + " and " +
                     shape_str(tb.shape()));
  }
  Shape out_shape = ta.shape();
  out_shape[0] += tb.dim(0);
  Tensor out = Tensor::zeros(out_shape);
  std::copy(ta.data(), ta.data() + ta.size(), out.data());
  std::copy(tb.data(), tb.data() + tb.size(), out.data() + ta.size());
  Node n = binary(Op::kConcat0, a, b, std::move(out));
  n.aux = {ta.dim(0), tb.dim(0)};
  return a.graph->make(std::move(n));
}

Var slice_rows(Var a, int64_t start, int64_t len) {
  check_valid("slice_rows", a);
  const Tensor& ta = a.value();
  if (ta.rank() < 1 || ta.rank() > 2) {
    throw ShapeError("slice_rows: expected rank-1 or rank-2, got " + shape_str(ta.shape()));
  }
  if (start < 0 || len < 1 || start + len > axis0_len(ta)) {
    throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of " + shape_str(ta.shape()));
  }
  int64_t w = row_width(ta);
  Shape out_shape = ta.shape();
  out_shape[0] = len;
  Tensor out = Tensor::zeros(out_shape);
  std::copy(ta.data() + start * w, ta.data() + (start + len) * w, out.data());
  Node n = unary(Op::kSliceRows, a, std::move(out));
  n.aux = {start, len, axis0_len(ta)};
  return a.graph->make(std::move(n));
}

Var pad_rows(Var a, int64_t before, int64_t total) {
  check_valid("pad_rows", a);
  const Tensor& ta = a.value();
  if (ta.rank() < 1 || ta.rank() > 2) {
    throw ShapeError("pad_rows: expected rank-1 or rank-2, got " + shape_str(ta.shape()));
  }
  if (before < 0 || before + axis0_len(ta) > total) {
    throw ShapeError("pad_rows: padded range exceeds total rows");
  }
  int64_t w = row_width(ta);
  Shape out_shape = ta.shape();
  out_shape[0] = total;
  Tensor out = Tensor::zeros(out_shape);
  std::copy(ta.data(), ta.data() + ta.size(), out.data() + before * w);
  Node n = unary(Op::kPadRows, a, std::move(out));
  n.aux = {before, axis0_len(ta)};
  return a.graph->make(std::move(n));
}

Var reshape(Var a, Shape shape) {
  check_valid("reshape", a);
  const Tensor& ta = a.value();
  if (shape_size(shape) != ta.size()) {
    throw ShapeError("reshape: cannot reshape " + shape_str(ta.shape()) + " to " +
                     shape_str(shape));
  }
  Tensor out = Tensor::from(std::move(shape),
                            std::vector<double>(ta.data(), ta.data() + ta.size()));
  return a.graph->make(unary(Op::kReshape, a, std::move(out)));
}

Var detach(Var a) {
  check_valid("detach", a);
  Node n;
  n.op = Op::kDetach;
  n.parents[0] = a.id;
  n.n_parents = 1;
  n.requires_grad = false;
  n.value = a.value();
  return a.graph->make(std::move(n));
}

Var conv2d(Var x, Var w, int64_t stride, int64_t pad) {
  check_valid("conv2d", x);
  check_valid("conv2d", w);
  check_same_graph("conv2d", x, w);
  const Tensor& tx = x.value();
  const Tensor& tw = w.value();
  check_rank("conv2d", tx, 3);
  if (tw.rank() != 4) throw ShapeError("conv2d: weight must be [Co,Ci,kh,kw], got " + shape_str(tw.shape()));
  if (tx.dim(0) != tw.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(tx.dim(0)) +
                     " vs weight channels " + std::to_string(tw.dim(1)));
  }
  ConvGeom g{};
  g.ci = tx.dim(0);
  g.h = tx.dim(1);
  g.w = tx.dim(2);
  g.co = tw.dim(0);
  g.kh = tw.dim(2);
  g.kw = tw.dim(3);
  g.stride = stride;
  g.pad = pad;
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d: kernel larger than padded input");

  Tensor cols = im2col(tx, g);
  Tensor out = Tensor::zeros({g.co, g.ho, g.wo});
  ConstMapMat mw(tw.data(), g.co, g.ci * g.kh * g.kw);
  ConstMapMat mc(cols.data(), g.ci * g.kh * g.kw, g.ho * g.wo);
  MapMat mo(out.data(), g.co, g.ho * g.wo);
  mo.noalias() = mw * mc;
  Node n = binary(Op::kConv2d, x, w, std::move(out));
  n.aux = g.to_aux();
  return x.graph->make(std::move(n));
}

namespace {

// Gradient ops for conv2d. These are first-order only: asking for their
// gradient throws, which is fine because the backbone is frozen during
// episodic training and conv layers never sit inside the bi-level tape.
Var conv2d_grad_input(Var w, Var gout, const ConvGeom& g) {
  const Tensor& tw = w.value();
  const Tensor& tg = gout.value();
  Tensor cols_grad = Tensor::zeros({g.ci * g.kh * g.kw, g.ho * g.wo});
  ConstMapMat mw(tw.data(), g.co, g.ci * g.kh * g.kw);
  ConstMapMat mg(tg.data(), g.co, g.ho * g.wo);
  MapMat mcg(cols_grad.data(), g.ci * g.kh * g.kw, g.ho * g.wo);
  mcg.noalias() = mw.transpose() * mg;
  Node n = binary(Op::kConv2dGradInput, w, gout, col2im(cols_grad, g));
  n.aux = g.to_aux();
  return w.graph->make(std::move(n));
}

Var conv2d_grad_weight(Var x, Var gout, const ConvGeom& g) {
  Tensor cols = im2col(x.value(), g);
  const Tensor& tg = gout.value();
  Tensor gw = Tensor::zeros({g.co, g.ci, g.kh, g.kw});
  ConstMapMat mg(tg.data(), g.co, g.ho * g.wo);
  ConstMapMat mc(cols.data(), g.ci * g.kh * g.kw, g.ho * g.wo);
  MapMat mgw(gw.data(), g.co, g.ci * g.kh * g.kw);
  mgw.noalias() = mg * mc.transpose();
  Node n = binary(Op::kConv2dGradWeight, x, gout, std::move(gw));
  n.aux = g.to_aux();
  return x.graph->make(std::move(n));
}

}  // namespace

Var avg_pool2(Var x) {
  check_valid("avg_pool2", x);
  const Tensor& tx = x.value();
  check_rank("avg_pool2", tx, 3);
  if (tx.dim(1) % 2 != 0 || tx.dim(2) % 2 != 0) {
    throw ShapeError("avg_pool2: spatial dims must be even, got " + shape_str(tx.shape()));
  }
  int64_t c = tx.dim(0), ho = tx.dim(1) / 2, wo = tx.dim(2) / 2;
  Tensor out = Tensor::zeros({c, ho, wo});
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t i = 0; i < ho; ++i) {
      for (int64_t j = 0; j < wo; ++j) {
        out.at(ci, i, j) = 0.25 * (tx.at(ci, 2 * i, 2 * j) + tx.at(ci, 2 * i, 2 * j + 1) +
                                   tx.at(ci, 2 * i + 1, 2 * j) + tx.at(ci, 2 * i + 1, 2 * j + 1));
      }
    }
  }
  return x.graph->make(unary(Op::kAvgPool2, x, std::move(out)));
}

namespace {

Var avg_unpool2(Var g) {
  const Tensor& tg = g.value();
  int64_t c = tg.dim(0), hi = tg.dim(1), wi = tg.dim(2);
  Tensor out = Tensor::zeros({c, hi * 2, wi * 2});
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t i = 0; i < hi; ++i) {
      for (int64_t j = 0; j < wi; ++j) {
        double v = 0.25 * tg.at(ci, i, j);
        out.at(ci, 2 * i, 2 * j) = v;
        out.at(ci, 2 * i, 2 * j + 1) = v;
        out.at(ci, 2 * i + 1, 2 * j) = v;
        out.at(ci, 2 * i + 1, 2 * j + 1) = v;
      }
    }
  }
  return g.graph->make(unary(Op::kAvgUnpool2, g, std::move(out)));
}

}  // namespace

// ---- backward ----

std::vector<Var> Graph::backward(Var out, const std::vector<Var>& wrt) {
  if (!out.valid() || out.graph != this) throw NumericError("backward: output not on this graph");
  if (out.value().size() != 1) {
    throw NumericError("backward: output is not a scalar (shape " +
                       shape_str(out.value().shape()) + ")");
  }
  for (Var v : wrt) {
    if (!v.valid() || v.graph != this) throw NumericError("backward: wrt var not on this graph");
  }

  const int32_t limit = out.id;
  std::vector<int32_t> adjoint(static_cast<size_t>(limit) + 1, -1);
  adjoint[static_cast<size_t>(limit)] = value(Tensor::scalar(1.0)).id;

  auto accumulate = [&](int32_t parent, Var grad) {
    if (parent < 0 || !nodes_[static_cast<size_t>(parent)].requires_grad) return;
    int32_t& slot = adjoint[static_cast<size_t>(parent)];
    slot = slot < 0 ? grad.id : add(Var{this, slot}, grad).id;
  };

  for (int32_t id = limit; id >= 0; --id) {
    if (adjoint[static_cast<size_t>(id)] < 0) continue;
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || n.n_parents == 0) continue;
    Var g{this, adjoint[static_cast<size_t>(id)]};
    Var a{this, n.parents[0]};
    Var b{this, n.parents[1]};
    Var self{this, id};

    switch (n.op) {
      case Op::kAdd:
        accumulate(a.id, g);
        accumulate(b.id, g);
        break;
      case Op::kSub:
        accumulate(a.id, g);
        accumulate(b.id, neg(g));
        break;
      case Op::kMul:
        accumulate(a.id, mul(g, b));
        accumulate(b.id, mul(g, a));
        break;
      case Op::kDiv:
        accumulate(a.id, vdiv(g, b));
        accumulate(b.id, neg(mul(g, vdiv(self, b))));
        break;
      case Op::kScale:
        accumulate(a.id, scale(g, n.aux_scalar));
        break;
      case Op::kAddConst:
        accumulate(a.id, g);
        break;
      case Op::kMatmul:
        accumulate(a.id, matmul(g, transpose(b)));
        accumulate(b.id, matmul(transpose(a), g));
        break;
      case Op::kTranspose:
        accumulate(a.id, transpose(g));
        break;
      case Op::kRelu: {
        const Tensor& tx = a.value();
        Tensor mask = Tensor::zeros(tx.shape());
        for (int64_t i = 0; i < tx.size(); ++i) mask[i] = tx[i] > 0.0 ? 1.0 : 0.0;
        accumulate(a.id, mul(g, value(std::move(mask))));
        break;
      }
      case Op::kSigmoid: {
        Var one_minus = add_const(neg(self), 1.0);
        accumulate(a.id, mul(g, mul(self, one_minus)));
        break;
      }
      case Op::kExp:
        accumulate(a.id, mul(g, self));
        break;
      case Op::kLog:
        accumulate(a.id, vdiv(g, a));
        break;
      case Op::kSumAll:
        accumulate(a.id, broadcast_scalar(g, a.value().shape()));
        break;
      case Op::kBroadcastScalar:
        accumulate(a.id, sum_all(g));
        break;
      case Op::kRowSum:
        accumulate(a.id, bcast_cols(g, a.value().dim(1)));
        break;
      case Op::kColSum:
        accumulate(a.id, bcast_rows(g, a.value().dim(0)));
        break;
      case Op::kBcastCols:
        accumulate(a.id, row_sum(g));
        break;
      case Op::kBcastRows:
        accumulate(a.id, col_sum(g));
        break;
      case Op::kRepeatRows:
        accumulate(a.id, sum_row_groups(g, n.aux[0]));
        break;
      case Op::kTileRows:
        accumulate(a.id, sum_row_blocks(g, n.aux[0]));
        break;
      case Op::kSumRowGroups:
        accumulate(a.id, repeat_rows(g, n.aux[0]));
        break;
      case Op::kSumRowBlocks:
        accumulate(a.id, tile_rows(g, n.aux[0]));
        break;
      case Op::kGatherRows:
        accumulate(a.id, scatter_rows(g, n.index, n.aux[0]));
        break;
      case Op::kScatterRows:
        accumulate(a.id, gather_rows(g, n.index));
        break;
      case Op::kConcat0:
        accumulate(a.id, slice_rows(g, 0, n.aux[0]));
        accumulate(b.id, slice_rows(g, n.aux[0], n.aux[1]));
        break;
      case Op::kSliceRows:
        accumulate(a.id, pad_rows(g, n.aux[0], n.aux[2]));
        break;
      case Op::kPadRows:
        accumulate(a.id, slice_rows(g, n.aux[0], n.aux[1]));
        break;
      case Op::kReshape:
        accumulate(a.id, reshape(g, a.value().shape()));
        break;
      case Op::kConv2d: {
        ConvGeom geom = ConvGeom::from_aux(n.aux);
        accumulate(a.id, conv2d_grad_input(b, g, geom));
        accumulate(b.id, conv2d_grad_weight(a, g, geom));
        break;
      }
      case Op::kConv2dGradInput:
      case Op::kConv2dGradWeight:
        throw NumericError("backward: second-order conv2d gradients are not supported");
      case Op::kAvgPool2:
        accumulate(a.id, avg_unpool2(g));
        break;
      case Op::kAvgUnpool2:
        accumulate(a.id, avg_pool2(g));
        break;
      case Op::kValue:
      case Op::kParam:
      case Op::kDetach:
        break;  // leaves
    }
  }

  std::vector<Var> grads;
  grads.reserve(wrt.size());
  for (Var v : wrt) {
    int32_t slot = v.id <= limit ? adjoint[static_cast<size_t>(v.id)] : -1;
    grads.push_back(slot >= 0 ? Var{this, slot} : value(Tensor::zeros(v.value().shape())));
  }
  return grads;
}

// ---- composites ----

Var mean_all(Var a) {
  check_valid("mean_all", a);
  return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size()));
}

Var affine(Var x, Var w, Var b) {
  Var y = matmul(x, w);
  return add(y, bcast_rows(b, y.value().dim(0)));
}

Var gap_spatial(Var x) {
  check_valid("gap_spatial", x);
  const Tensor& tx = x.value();
  check_rank("gap_spatial", tx, 3);
  int64_t c = tx.dim(0), spatial = tx.dim(1) * tx.dim(2);
  Var flat = reshape(x, {c, spatial});
  return reshape(scale(row_sum(flat), 1.0 / static_cast<double>(spatial)), {c});
}

Var mul_channels(Var x, Var gate) {
  check_valid("mul_channels", x);
  check_valid("mul_channels", gate);
  const Tensor& tx = x.value();
  check_rank("mul_channels", tx, 3);
  if (gate.value().rank() != 1 || gate.value().dim(0) != tx.dim(0)) {
    throw ShapeError("mul_channels: gate " + shape_str(gate.value().shape()) +
                     " does not match channels of " + shape_str(tx.shape()));
  }
  int64_t c = tx.dim(0), spatial = tx.dim(1) * tx.dim(2);
  Var flat = reshape(x, {c, spatial});
  Var gate_mat = bcast_cols(reshape(gate, {c, 1}), spatial);
  return reshape(mul(flat, gate_mat), tx.shape());
}

Var row_logsumexp(Var m) {
  check_valid("row_logsumexp", m);
  const Tensor& tm = m.value();
  check_rank("row_logsumexp", tm, 2);
  // Row maxima enter as constants; the dependence cancels exactly, so the
  // gradient is still softmax.
  Tensor maxes = Tensor::zeros({tm.dim(0), 1});
  for (int64_t i = 0; i < tm.dim(0); ++i) {
    double mx = tm.at(i, 0);
    for (int64_t j = 1; j < tm.dim(1); ++j) mx = std::max(mx, tm.at(i, j));
    maxes.at(i, 0) = mx;
  }
  Var max_const = m.graph->value(std::move(maxes));
  Var shifted = sub(m, bcast_cols(max_const, tm.dim(1)));
  Var lse = vlog(row_sum(vexp(shifted)));
  return add(lse, max_const);
}

Var mean_cross_entropy_rows(Var scores, Var targets) {
  check_valid("mean_cross_entropy_rows", scores);
  check_same_shape("mean_cross_entropy_rows", scores.value(), targets.value());
  Var lse = row_logsumexp(scores);               // [B,1]
  Var dot = row_sum(mul(targets, scores));       // [B,1]
  return mean_all(sub(lse, dot));
}

Var softmax_vec(Var v) {
  check_valid("softmax_vec", v);
  const Tensor& tv = v.value();
  check_rank("softmax_vec", tv, 1);
  int64_t n = tv.dim(0);
  Var row = reshape(v, {1, n});
  Var shifted = sub(row, bcast_cols(row_logsumexp(row), n));
  return reshape(vexp(shifted), {n});
}

}  // namespace czsl
