#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "czsl/baselines.hpp"
#include "czsl/meta_train.hpp"
#include "czsl/synthetic.hpp"

namespace czsl::cli {

/// One declarative experiment: dataset, episode sizes, method, training and
/// evaluation settings. Parsed from an INI-style file ([section], key =
/// value, '#' comments); unknown sections or keys are rejected. Command-line
/// overrides (--set section.key=value) beat the file, the file beats the
/// defaults.
struct ExperimentConfig {
  struct DatasetSection {
    std::string source = "synthetic";  // synthetic | manifest
    std::string dir = "data";
    int64_t n_type1 = 12;
    int64_t n_type2 = 12;
    int64_t samples_per_composition = 20;
    int64_t image_size = 16;
    double noise_sigma = 0.05;
    int64_t placement_jitter = 2;
    double background_amplitude = 0.2;
    int64_t embedding_dim = 32;
    uint64_t seed = 0;
  } dataset;

  struct EpisodeSection {
    int64_t n_primitives = 5;
    int64_t support_per_class = 5;
    int64_t query_per_class = 5;
    int64_t max_attempts = 10000;
  } episode;

  struct MethodSection {
    std::string name = "ours";  // ours | visprod | le
    bool second_order = false;
    bool bilevel = true;
    bool mixup = true;
    double mixup_alpha = 1.0;
    double inner_lr = 0.4;
    int64_t inner_steps = 1;
    int64_t fit_iters = 100;
    int64_t fit_batch = 4;
    double fit_lr = 0.01;
    double fit_weight_decay = 0.001;
    int64_t le_embed_dim = 32;
  } method;

  struct TrainingSection {
    double outer_lr = 0.001;
    double weight_decay = 0.0005;
    int64_t max_episodes = 4000;
    int64_t val_every = 500;
    int64_t val_episodes = 50;
    int64_t pretrain_epochs = 8;
    int64_t pretrain_batch = 64;
    double pretrain_lr = 0.001;
    double pretrain_weight_decay = 0.0005;
  } training;

  struct EvaluationSection {
    int64_t n_test_episodes = 200;
    std::vector<uint64_t> seeds = {1};
    int64_t threads = 1;
  } evaluation;

  struct OutputSection {
    std::string dir = "runs/default";
    bool force = false;
    bool resume = false;
  } output;

  void validate() const;

  SyntheticConfig synthetic_config() const;
  EpisodeConfig episode_config() const;
  ArchConfig arch_config() const;
  BackboneConfig backbone_config() const;
  TrainConfig train_config(uint64_t seed) const;
  PretrainConfig pretrain_config(uint64_t seed) const;
  BaselineConfig baseline_config() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);
/// key form: section.key=value
void apply_override(ExperimentConfig& cfg, const std::string& assignment);
/// Fully resolved INI text, defaults expanded, fixed key order.
std::string render_config(const ExperimentConfig& cfg);

}  // namespace czsl::cli
