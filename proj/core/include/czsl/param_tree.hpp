#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "czsl/tensor.hpp"

namespace czsl {

/// Named collection of tensors with deterministic (sorted-by-name) iteration
/// order. Checkpoints round-trip bit-exactly.
class ParamTree {
public:
  ParamTree() = default;

  void set(const std::string& name, Tensor t);
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  bool contains(const std::string& name) const { return leaves_.count(name) > 0; }

  size_t size() const { return leaves_.size(); }
  bool empty() const { return leaves_.empty(); }
  int64_t total_elements() const;
  std::vector<std::string> names() const;

  auto begin() { return leaves_.begin(); }
  auto end() { return leaves_.end(); }
  auto begin() const { return leaves_.begin(); }
  auto end() const { return leaves_.end(); }

  /// True when both trees have the same leaf names and shapes.
  bool same_structure(const ParamTree& other) const;

  /// this += a * other; structures must match.
  ParamTree& add_scaled(const ParamTree& other, double a);
  ParamTree& scale(double a);
  static ParamTree zeros_like(const ParamTree& other);
  double squared_l2_norm() const;
  bool all_finite() const;

  friend bool operator==(const ParamTree& a, const ParamTree& b) {
    return a.leaves_ == b.leaves_;
  }

  /// Binary checkpoint; load(save(t)) == t bit-for-bit.
  void save(const std::filesystem::path& path) const;
  static ParamTree load(const std::filesystem::path& path);

private:
  std::map<std::string, Tensor> leaves_;
};

}  // namespace czsl
