#pragma once

#include "experiment_config.hpp"

namespace czsl::cli {

/// Materializes the synthetic benchmark as three split manifests plus raw
/// tensor files under dataset.dir. Refuses to overwrite without force.
void cmd_generate(const ExperimentConfig& cfg);

/// Pretrains the backbone for one seed and writes seed<k>/backbone.ckpt.
void cmd_pretrain(const ExperimentConfig& cfg, uint64_t seed);

/// Meta-trains for one seed (pretraining first when no backbone is cached)
/// and writes seed<k>/model.ckpt plus the training log. Baselines have no
/// meta-training; the command reports that and returns.
void cmd_train(const ExperimentConfig& cfg, uint64_t seed);

/// Runs test episodes for one seed and appends a record to results.jsonl.
void cmd_evaluate(const ExperimentConfig& cfg, uint64_t seed, bool fresh_records);

/// Renders the comparison table from one or more record files.
void cmd_report(const std::vector<std::filesystem::path>& record_files,
                const std::filesystem::path& out_file);

/// Whole pipeline for every configured seed: pretrain (if needed), train,
/// evaluate, report. Writes the resolved config next to the outputs first.
void cmd_run(const ExperimentConfig& cfg);

/// Loads (manifest source) or regenerates (synthetic source) the dataset.
Dataset load_dataset(const ExperimentConfig& cfg);

}  // namespace czsl::cli
