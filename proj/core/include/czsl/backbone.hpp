#pragma once

#include "czsl/autodiff.hpp"
#include "czsl/param_tree.hpp"
#include "czsl/tape_function.hpp"

namespace czsl {

/// Four 3x3 conv blocks; the first two are followed by 2x2 mean pooling, so a
/// 16x16 input comes out as channels x 4 x 4.
struct BackboneConfig {
  int64_t image_channels = 3;
  int64_t image_size = 16;
  int64_t channels = 32;

  int64_t feature_size() const { return image_size / 4; }
};

/// Frozen feature extractor. forward() refuses to run until the backbone is
/// finalized (pretrained); episodic training never touches its parameters.
class Backbone {
public:
  Backbone() = default;
  Backbone(BackboneConfig cfg, ParamTree params, bool finalized)
      : cfg_(cfg), params_(std::move(params)), finalized_(finalized) {}

  static Backbone random_init(const BackboneConfig& cfg, uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }
  const ParamTree& params() const { return params_; }
  bool finalized() const { return finalized_; }
  void finalize() { finalized_ = true; }

  /// Feature map [channels, s, s] for one image.
  Tensor forward(const Tensor& image) const;
  /// Spatially pooled features [channels].
  Tensor pooled(const Tensor& image) const;
  /// Pooled features for a batch, one row per image.
  Tensor pooled_batch(const std::vector<const Tensor*>& images) const;

private:
  BackboneConfig cfg_;
  ParamTree params_;
  bool finalized_ = false;
};

/// Differentiable forward for pretraining; returns the feature-map var.
Var backbone_forward_taped(Graph& g, const VarTree& params, Var image, const BackboneConfig& cfg);

}  // namespace czsl
