#include "commands.hpp"

#include <atomic>
#include <fstream>
#include <functional>
#include <iostream>
#include <thread>

#include <json.hpp>

#include "czsl/manifest.hpp"

namespace czsl::cli {

namespace {

const char* kSplitFiles[] = {"train.manifest", "val.manifest", "test.manifest"};

std::filesystem::path seed_dir(const ExperimentConfig& cfg, uint64_t seed) {
  return std::filesystem::path(cfg.output.dir) / ("seed" + std::to_string(seed));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

void save_backbone(const Backbone& backbone, const std::filesystem::path& dir) {
  backbone.params().save(dir / "backbone.ckpt");
  nlohmann::ordered_json j;
  j["image_channels"] = backbone.config().image_channels;
  j["image_size"] = backbone.config().image_size;
  j["channels"] = backbone.config().channels;
  j["finalized"] = backbone.finalized();
  write_text(dir / "backbone.meta.json", j.dump(2) + "\n");
}

Backbone load_backbone(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "backbone.meta.json");
  if (!meta) throw DataError("no backbone at '" + dir.string() + "' (run pretrain first)");
  nlohmann::json j = nlohmann::json::parse(meta);
  BackboneConfig cfg;
  cfg.image_channels = j.at("image_channels").get<int64_t>();
  cfg.image_size = j.at("image_size").get<int64_t>();
  cfg.channels = j.at("channels").get<int64_t>();
  return Backbone(cfg, ParamTree::load(dir / "backbone.ckpt"), j.at("finalized").get<bool>());
}

void save_model(const Model& model, const std::filesystem::path& dir) {
  model.theta.save(dir / "model.ckpt");
  nlohmann::ordered_json j;
  j["embedding_dim"] = model.arch.embedding_dim;
  j["gcn_hidden"] = model.arch.gcn_hidden;
  j["shared_dim"] = model.arch.shared_dim;
  j["backbone_channels"] = model.arch.backbone_channels;
  j["corr_hidden"] = model.arch.corr_hidden;
  j["embed_hidden"] = model.arch.embed_hidden;
  j["embedding_seed"] = model.embedding_seed;
  j["inner_lr"] = model.inner_lr;
  j["inner_steps"] = model.inner_steps;
  j["adapt_at_test"] = model.adapt_at_test;
  write_text(dir / "model.meta.json", j.dump(2) + "\n");
}

Model load_model(const std::filesystem::path& dir, Backbone backbone) {
  std::ifstream meta(dir / "model.meta.json");
  if (!meta) throw DataError("no model at '" + dir.string() + "' (run train first)");
  nlohmann::json j = nlohmann::json::parse(meta);
  Model m;
  m.arch.embedding_dim = j.at("embedding_dim").get<int64_t>();
  m.arch.gcn_hidden = j.at("gcn_hidden").get<int64_t>();
  m.arch.shared_dim = j.at("shared_dim").get<int64_t>();
  m.arch.backbone_channels = j.at("backbone_channels").get<int64_t>();
  m.arch.corr_hidden = j.at("corr_hidden").get<int64_t>();
  m.arch.embed_hidden = j.at("embed_hidden").get<int64_t>();
  m.embedding_seed = j.at("embedding_seed").get<uint64_t>();
  m.inner_lr = j.at("inner_lr").get<double>();
  m.inner_steps = j.at("inner_steps").get<int64_t>();
  m.adapt_at_test = j.at("adapt_at_test").get<bool>();
  m.theta = ParamTree::load(dir / "model.ckpt");
  m.backbone = std::move(backbone);
  return m;
}

Backbone ensure_backbone(const ExperimentConfig& cfg, uint64_t seed, const Dataset& ds) {
  std::filesystem::path dir = seed_dir(cfg, seed);
  if (std::filesystem::exists(dir / "backbone.ckpt")) {
    std::cout << "[seed " << seed << "] using cached backbone\n";
    return load_backbone(dir);
  }
  std::filesystem::create_directories(dir);
  std::cout << "[seed " << seed << "] pretraining backbone...\n";
  PretrainOutcome outcome =
      pretrain_backbone(ds, Split::kTrain, cfg.backbone_config(), cfg.pretrain_config(seed));
  std::cout << "[seed " << seed << "] pretraining done, final-epoch accuracy "
            << outcome.final_train_accuracy << "\n";
  save_backbone(outcome.backbone, dir);
  return outcome.backbone;
}

std::string format_train_log(const std::vector<TrainLogEntry>& log) {
  std::ostringstream out;
  out << "# episode inner_loss outer_loss val_hm\n";
  out.precision(17);
  for (const TrainLogEntry& e : log) {
    out << e.episode << " " << e.inner_loss << " " << e.outer_loss;
    if (e.has_validation) out << " " << e.val_hm;
    out << "\n";
  }
  return out.str();
}

std::vector<Episode> sample_test_episodes(const Dataset& ds, const ExperimentConfig& cfg,
                                          uint64_t seed) {
  rng::Engine eng = rng::make_engine(rng::derive_seed(seed, "eval-sampler"));
  std::vector<Episode> episodes;
  episodes.reserve(static_cast<size_t>(cfg.evaluation.n_test_episodes));
  for (int64_t i = 0; i < cfg.evaluation.n_test_episodes; ++i) {
    episodes.push_back(sample_episode(ds, Split::kTest, cfg.episode_config(), eng));
  }
  return episodes;
}

/// Evaluates episodes with a pure per-episode predictor, fanned out over
/// worker threads, results collected in episode order.
std::vector<EpisodeResult> evaluate_episodes(
    const std::vector<Episode>& episodes, int64_t threads,
    const std::function<std::vector<Composition>(const Episode&, int64_t)>& predict) {
  std::vector<EpisodeResult> results(episodes.size());
  int64_t n_workers = std::min<int64_t>(threads, static_cast<int64_t>(episodes.size()));
  if (n_workers <= 1) {
    for (size_t i = 0; i < episodes.size(); ++i) {
      results[i] = make_result(episodes[i], predict(episodes[i], static_cast<int64_t>(i)));
    }
    return results;
  }
  std::vector<std::thread> workers;
  std::atomic<size_t> next{0};
  for (int64_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&]() {
      for (;;) {
        size_t i = next.fetch_add(1);
        if (i >= episodes.size()) return;
        results[i] = make_result(episodes[i], predict(episodes[i], static_cast<int64_t>(i)));
      }
    });
  }
  for (std::thread& t : workers) t.join();
  return results;
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.source == "synthetic") {
    return generate_benchmark(cfg.synthetic_config());
  }
  Dataset merged;
  for (const char* name : kSplitFiles) {
    std::filesystem::path path = std::filesystem::path(cfg.dataset.dir) / name;
    if (!std::filesystem::exists(path)) {
      throw DataError("dataset manifest '" + path.string() + "' does not exist");
    }
    merged.merge(load_manifest(path));
  }
  return merged;
}

void cmd_generate(const ExperimentConfig& cfg) {
  if (cfg.dataset.source != "synthetic") {
    throw ConfigError("generate: dataset.source is '" + cfg.dataset.source +
                      "'; only synthetic datasets can be generated");
  }
  std::filesystem::path dir(cfg.dataset.dir);
  for (const char* name : kSplitFiles) {
    if (std::filesystem::exists(dir / name) && !cfg.output.force) {
      throw ConfigError("generate: '" + (dir / name).string() +
                        "' already exists; pass --force to overwrite");
    }
  }
  std::filesystem::create_directories(dir);
  std::vector<Dataset> parts = generate_benchmark_parts(cfg.synthetic_config());
  for (size_t i = 0; i < parts.size(); ++i) {
    ManifestWriteOptions opt;
    opt.image_dir = std::string("images_") + std::to_string(i);
    save_manifest(parts[i], dir / kSplitFiles[i], opt);
    std::cout << "wrote " << (dir / kSplitFiles[i]).string() << " (" << parts[i].sample_count()
              << " samples)\n";
  }
}

void cmd_pretrain(const ExperimentConfig& cfg, uint64_t seed) {
  Dataset ds = load_dataset(cfg);
  std::filesystem::path dir = seed_dir(cfg, seed);
  if (std::filesystem::exists(dir / "backbone.ckpt") && !cfg.output.force) {
    throw ConfigError("pretrain: backbone already exists at '" + dir.string() +
                      "'; pass --force to redo");
  }
  std::filesystem::create_directories(dir);
  PretrainOutcome outcome =
      pretrain_backbone(ds, Split::kTrain, cfg.backbone_config(), cfg.pretrain_config(seed));
  save_backbone(outcome.backbone, dir);
  std::cout << "backbone saved to " << dir.string() << ", final-epoch accuracy "
            << outcome.final_train_accuracy << "\n";
}

void cmd_train(const ExperimentConfig& cfg, uint64_t seed) {
  if (cfg.method.name != "ours") {
    std::cout << "method '" << cfg.method.name
              << "' fits per test episode and has no meta-training step\n";
    return;
  }
  Dataset ds = load_dataset(cfg);
  Backbone backbone = ensure_backbone(cfg, seed, ds);
  std::filesystem::path dir = seed_dir(cfg, seed);

  TrainCheckpointing ckpt{dir / "train_state.json", cfg.output.resume};
  std::cout << "[seed " << seed << "] training for up to " << cfg.training.max_episodes
            << " episodes...\n";
  TrainResult result =
      train(ds, cfg.episode_config(), cfg.arch_config(), backbone, cfg.train_config(seed), ckpt);
  save_model(result.model, dir);
  write_text(dir / "train_log.txt", format_train_log(result.log));
  std::cout << "[seed " << seed << "] best validation HM " << result.best_val_hm << " at episode "
            << result.best_episode << "\n";
}

void cmd_evaluate(const ExperimentConfig& cfg, uint64_t seed, bool fresh_records) {
  Dataset ds = load_dataset(cfg);
  Backbone backbone = ensure_backbone(cfg, seed, ds);
  FeatureCache cache(backbone, ds);
  std::vector<Episode> episodes = sample_test_episodes(ds, cfg, seed);
  std::vector<EpisodeResult> results;

  if (cfg.method.name == "ours") {
    Model model = load_model(seed_dir(cfg, seed), backbone);
    results = evaluate_episodes(episodes, cfg.evaluation.threads,
                                [&](const Episode& ep, int64_t) {
                                  return infer_episode(model, cache, ds, ep);
                                });
  } else if (cfg.method.name == "visprod") {
    BaselineConfig bl = cfg.baseline_config();
    results = evaluate_episodes(episodes, cfg.evaluation.threads,
                                [&](const Episode& ep, int64_t index) {
                                  rng::Engine eng = rng::make_engine(rng::derive_seed(
                                      rng::derive_seed(seed, "visprod"),
                                      static_cast<uint64_t>(index)));
                                  return visprod_fit_infer(ep, cache, bl, eng);
                                });
  } else {
    BaselineConfig bl = cfg.baseline_config();
    EmbeddingProvider provider(cfg.dataset.embedding_dim, rng::derive_seed(seed, "embeddings"));
    results = evaluate_episodes(episodes, cfg.evaluation.threads,
                                [&](const Episode& ep, int64_t index) {
                                  rng::Engine eng = rng::make_engine(rng::derive_seed(
                                      rng::derive_seed(seed, "le"), static_cast<uint64_t>(index)));
                                  return le_fit_infer(ep, ds, cache, provider, bl, eng,
                                                      cfg.method.le_embed_dim);
                                });
  }

  ResultRecord record;
  record.method = cfg.method.name;
  record.dataset = cfg.dataset.source == "synthetic" ? "synthetic" : cfg.dataset.dir;
  record.n_primitives = cfg.episode.n_primitives;
  record.support_per_class = cfg.episode.support_per_class;
  record.query_per_class = cfg.episode.query_per_class;
  record.seed = seed;
  record.metrics = aggregate(results);

  std::filesystem::create_directories(cfg.output.dir);
  std::filesystem::path records_path = std::filesystem::path(cfg.output.dir) / "results.jsonl";
  write_records({record}, records_path, !fresh_records);
  std::cout << render_table({record});
}

void cmd_report(const std::vector<std::filesystem::path>& record_files,
                const std::filesystem::path& out_file) {
  std::vector<ResultRecord> records;
  for (const std::filesystem::path& p : record_files) {
    std::vector<ResultRecord> batch = read_records(p);
    records.insert(records.end(), batch.begin(), batch.end());
  }
  std::string table = render_table(records);
  std::cout << table;
  if (!out_file.empty()) write_text(out_file, table);
}

void cmd_run(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output.dir);
  write_text(std::filesystem::path(cfg.output.dir) / "resolved_config.ini", render_config(cfg));
  bool fresh = true;
  for (uint64_t seed : cfg.evaluation.seeds) {
    if (cfg.method.name == "ours") cmd_train(cfg, seed);
    cmd_evaluate(cfg, seed, fresh);
    fresh = false;
  }
  std::filesystem::path records = std::filesystem::path(cfg.output.dir) / "results.jsonl";
  cmd_report({records}, std::filesystem::path(cfg.output.dir) / "report.txt");
}

}  // namespace czsl::cli
