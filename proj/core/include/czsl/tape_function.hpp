#pragma once

#include <functional>
#include <string>
#include <vector>

#include "czsl/autodiff.hpp"
#include "czsl/param_tree.hpp"

namespace czsl {

/// Differentiable leaves of a ParamTree, bound to one graph.
class VarTree {
public:
  VarTree() = default;
  /// Registers every leaf of `params` as a differentiable leaf on `g`.
  VarTree(Graph& g, const ParamTree& params);

  Var at(const std::string& name) const;
  void set(const std::string& name, Var v);
  const std::vector<std::pair<std::string, Var>>& leaves() const { return leaves_; }
  std::vector<Var> vars() const;

  /// Reads current leaf values back into a ParamTree.
  ParamTree values() const;

private:
  std::vector<std::pair<std::string, Var>> leaves_;  // sorted by name
};

/// A pure function built op-by-op on a fresh graph each call. Re-running with
/// the same parameters and inputs replays the identical op sequence, so
/// outputs are bit-identical.
using TapeFunction = std::function<Var(Graph&, const VarTree&, const std::vector<Var>&)>;

/// Runs `f` and returns the output value. `params` is never mutated.
Tensor evaluate(const TapeFunction& f, const ParamTree& params,
                const std::vector<Tensor>& inputs);

/// Reverse-mode gradient of a scalar-valued `f` w.r.t. every leaf.
ParamTree gradient(const TapeFunction& f, const ParamTree& params,
                   const std::vector<Tensor>& inputs);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  int64_t checked = 0;
  /// Coordinates skipped because a relu input came within 10*step of its
  /// kink during a probe evaluation.
  int64_t skipped = 0;
};

/// Central-difference check of gradient() per coordinate.
FiniteDiffReport finite_diff_check(const TapeFunction& f, const ParamTree& params,
                                   const std::vector<Tensor>& inputs, double step);

}  // namespace czsl
