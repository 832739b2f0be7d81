#pragma once

#include <functional>
#include <optional>

#include "czsl/metrics.hpp"
#include "czsl/mixup.hpp"
#include "czsl/scoring.hpp"

namespace czsl {

/// Pooled backbone features per sample id, computed once per run. Feature
/// extraction is the only place the frozen backbone touches dataset images.
class FeatureCache {
public:
  FeatureCache(const Backbone& backbone, const Dataset& ds);

  const Tensor& pooled(int64_t sample_id) const;  // [c_ch]
  /// Row-stacked pooled features for the given samples.
  Tensor pooled_rows(const std::vector<std::pair<int64_t, Composition>>& samples) const;

private:
  std::map<int64_t, Tensor> pooled_;
};

struct TrainConfig {
  double inner_lr = 0.4;   // adaptation step size
  double outer_lr = 1e-3;  // meta step size
  int64_t inner_steps = 1;
  int64_t max_episodes = 4000;
  double weight_decay = 5e-4;
  bool second_order = false;  // differentiate through the inner update
  bool bilevel = true;        // false: joint loss on support + query, no adaptation
  bool mixup = true;
  double mixup_alpha = 1.0;
  int64_t val_every = 500;
  int64_t val_episodes = 50;
  uint64_t seed = 0;
};

/// Trained episodic model. Inference behavior (adaptation step size, step
/// count, whether to adapt at all) travels with the model.
struct Model {
  ArchConfig arch;
  ParamTree theta;
  Backbone backbone;
  uint64_t embedding_seed = 0;  // provider seed, fixed per experiment
  double inner_lr = 0.4;
  int64_t inner_steps = 1;
  bool adapt_at_test = true;

  EmbeddingProvider provider() const {
    return EmbeddingProvider(arch.embedding_dim, embedding_seed);
  }
};

struct PretrainConfig {
  int64_t epochs = 8;
  int64_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 5e-4;
  uint64_t seed = 0;
};

struct PretrainOutcome {
  Backbone backbone;
  /// Running classification accuracy over the last epoch.
  double final_train_accuracy = 0.0;
};

/// Trains the backbone plus a temporary softmax head to classify every base
/// composition, then drops the head and freezes the result.
PretrainOutcome pretrain_backbone(const Dataset& ds, Split base_split, const BackboneConfig& cfg,
                                  const PretrainConfig& train);

/// Generic inner update: steps of theta <- theta - eps * grad(loss). The
/// callback returns (loss, gradient) at the given parameters.
using LossAndGrad = std::function<std::pair<double, ParamTree>(const ParamTree&)>;
ParamTree adapt(const ParamTree& theta, const LossAndGrad& loss, double eps, int64_t steps);

/// Inner update on an episode's support set (one-hot targets). Returns the
/// adapted parameters; the model is untouched.
ParamTree inner_adapt(const Model& model, const FeatureCache& cache, const Dataset& ds,
                      const Episode& episode, double eps, int64_t steps);

struct OuterStepInfo {
  double inner_loss = 0.0;  // support loss at theta
  double outer_loss = 0.0;  // query loss at the adapted parameters
};

/// One training update on one episode, in place on model.theta.
OuterStepInfo outer_step(Model& model, const FeatureCache& cache, const Dataset& ds,
                         const Episode& episode, const TrainConfig& cfg, rng::Engine& mixup_eng);

struct TrainLogEntry {
  int64_t episode = 0;
  double inner_loss = 0.0;
  double outer_loss = 0.0;
  bool has_validation = false;
  double val_hm = 0.0;
};

struct TrainResult {
  Model model;  // best validation checkpoint
  std::vector<TrainLogEntry> log;
  double best_val_hm = 0.0;
  int64_t best_episode = 0;
};

struct TrainCheckpointing {
  std::filesystem::path state_file;
  bool resume = false;
};

/// Episodic training on the train split with periodic validation on the val
/// split; the checkpoint with the best validation harmonic mean wins. When no
/// validation round ever runs, the final parameters win instead.
TrainResult train(const Dataset& ds, const EpisodeConfig& episode_cfg, const ArchConfig& arch,
                  const Backbone& backbone, const TrainConfig& cfg,
                  const std::optional<TrainCheckpointing>& checkpointing = std::nullopt);

/// Predictions for each query sample of a test episode: one adaptation on the
/// support set (when the model adapts at test time), then grid argmax.
std::vector<Composition> infer_episode(const Model& model, const FeatureCache& cache,
                                       const Dataset& ds, const Episode& episode);

}  // namespace czsl
