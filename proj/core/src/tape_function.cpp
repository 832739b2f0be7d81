#include "czsl/tape_function.hpp"

#include <algorithm>
#include <cmath>

#include "czsl/errors.hpp"

namespace czsl {

VarTree::VarTree(Graph& g, const ParamTree& params) {
  leaves_.reserve(params.size());
  for (const auto& [name, tensor] : params) {
    leaves_.emplace_back(name, g.param(tensor));
  }
}

Var VarTree::at(const std::string& name) const {
  auto it = std::lower_bound(leaves_.begin(), leaves_.end(), name,
                             [](const auto& leaf, const std::string& n) { return leaf.first < n; });
  if (it == leaves_.end() || it->first != name) {
    throw DataError("var tree: unknown leaf '" + name + "'");
  }
  return it->second;
}

void VarTree::set(const std::string& name, Var v) {
  auto it = std::lower_bound(leaves_.begin(), leaves_.end(), name,
                             [](const auto& leaf, const std::string& n) { return leaf.first < n; });
  if (it != leaves_.end() && it->first == name) {
    it->second = v;
  } else {
    leaves_.insert(it, {name, v});
  }
}

std::vector<Var> VarTree::vars() const {
  std::vector<Var> out;
  out.reserve(leaves_.size());
  for (const auto& [name, v] : leaves_) out.push_back(v);
  return out;
}

ParamTree VarTree::values() const {
  ParamTree out;
  for (const auto& [name, v] : leaves_) out.set(name, v.value());
  return out;
}

namespace {

struct EvalResult {
  Tensor value;
  double min_relu_abs;
};

EvalResult run(const TapeFunction& f, const ParamTree& params,
               const std::vector<Tensor>& inputs) {
  Graph g;
  VarTree tree(g, params);
  std::vector<Var> input_vars;
  input_vars.reserve(inputs.size());
  for (const Tensor& t : inputs) input_vars.push_back(g.value(t));
  Var out = f(g, tree, input_vars);
  if (!out.valid() || out.graph != &g) {
    throw NumericError("evaluate: tape function returned a var from another graph");
  }
  return {out.value(), g.min_relu_input_abs()};
}

}  // namespace

Tensor evaluate(const TapeFunction& f, const ParamTree& params,
                const std::vector<Tensor>& inputs) {
  return run(f, params, inputs).value;
}

ParamTree gradient(const TapeFunction& f, const ParamTree& params,
                   const std::vector<Tensor>& inputs) {
  Graph g;
  VarTree tree(g, params);
  std::vector<Var> input_vars;
  input_vars.reserve(inputs.size());
  for (const Tensor& t : inputs) input_vars.push_back(g.value(t));
  Var out = f(g, tree, input_vars);
  if (out.value().size() != 1) {
    throw NumericError("gradient: function output is not a scalar (shape " +
                       shape_str(out.value().shape()) + ")");
  }
  std::vector<Var> grads = g.backward(out, tree.vars());
  ParamTree result;
  size_t i = 0;
  for (const auto& [name, v] : tree.leaves()) result.set(name, grads[i++].value());
  return result;
}

FiniteDiffReport finite_diff_check(const TapeFunction& f, const ParamTree& params,
                                   const std::vector<Tensor>& inputs, double step) {
  if (step <= 0.0) throw NumericError("finite_diff_check: step must be positive");
  ParamTree analytic = gradient(f, params, inputs);
  double kink_threshold = 10.0 * step;

  FiniteDiffReport report;
  ParamTree probe = params;
  for (auto& [name, tensor] : probe) {
    const Tensor& grad = analytic.at(name);
    for (int64_t i = 0; i < tensor.size(); ++i) {
      double saved = tensor[i];
      tensor[i] = saved + step;
      EvalResult plus = run(f, probe, inputs);
      tensor[i] = saved - step;
      EvalResult minus = run(f, probe, inputs);
      tensor[i] = saved;
      if (plus.min_relu_abs < kink_threshold || minus.min_relu_abs < kink_threshold) {
        report.skipped++;
        continue;
      }
      double fd = (plus.value.item() - minus.value.item()) / (2.0 * step);
      double rel = std::fabs(fd - grad[i]) / std::max(1e-3, std::fabs(fd) + std::fabs(grad[i]));
      report.max_rel_error = std::max(report.max_rel_error, rel);
      report.checked++;
    }
  }
  return report;
}

}  // namespace czsl
