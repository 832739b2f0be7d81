#include "experiment_config.hpp"

#include <fstream>
#include <sstream>

#include "czsl/errors.hpp"

namespace czsl::cli {

namespace {

int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad unsigned integer for " + key + ": '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + v + "' (use true/false)");
}

std::vector<uint64_t> to_uint_list(const std::string& key, const std::string& v) {
  std::vector<uint64_t> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(to_uint(key, item));
  }
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

void set_key(ExperimentConfig& cfg, const std::string& section, const std::string& key,
             const std::string& value) {
  const std::string full = section + "." + key;
  auto& d = cfg.dataset;
  auto& e = cfg.episode;
  auto& m = cfg.method;
  auto& t = cfg.training;
  auto& v = cfg.evaluation;
  auto& o = cfg.output;
  if (section == "dataset") {
    if (key == "source") d.source = value;
    else if (key == "dir") d.dir = value;
    else if (key == "n_type1") d.n_type1 = to_int(full, value);
    else if (key == "n_type2") d.n_type2 = to_int(full, value);
    else if (key == "samples_per_composition") d.samples_per_composition = to_int(full, value);
    else if (key == "image_size") d.image_size = to_int(full, value);
    else if (key == "noise_sigma") d.noise_sigma = to_double(full, value);
    else if (key == "placement_jitter") d.placement_jitter = to_int(full, value);
    else if (key == "background_amplitude") d.background_amplitude = to_double(full, value);
    else if (key == "embedding_dim") d.embedding_dim = to_int(full, value);
    else if (key == "seed") d.seed = to_uint(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "episode") {
    if (key == "n_primitives") e.n_primitives = to_int(full, value);
    else if (key == "support_per_class") e.support_per_class = to_int(full, value);
    else if (key == "query_per_class") e.query_per_class = to_int(full, value);
    else if (key == "max_attempts") e.max_attempts = to_int(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "method") {
    if (key == "name") m.name = value;
    else if (key == "second_order") m.second_order = to_bool(full, value);
    else if (key == "bilevel") m.bilevel = to_bool(full, value);
    else if (key == "mixup") m.mixup = to_bool(full, value);
    else if (key == "mixup_alpha") m.mixup_alpha = to_double(full, value);
    else if (key == "inner_lr") m.inner_lr = to_double(full, value);
    else if (key == "inner_steps") m.inner_steps = to_int(full, value);
    else if (key == "fit_iters") m.fit_iters = to_int(full, value);
    else if (key == "fit_batch") m.fit_batch = to_int(full, value);
    else if (key == "fit_lr") m.fit_lr = to_double(full, value);
    else if (key == "fit_weight_decay") m.fit_weight_decay = to_double(full, value);
    else if (key == "le_embed_dim") m.le_embed_dim = to_int(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "training") {
    if (key == "outer_lr") t.outer_lr = to_double(full, value);
    else if (key == "weight_decay") t.weight_decay = to_double(full, value);
    else if (key == "max_episodes") t.max_episodes = to_int(full, value);
    else if (key == "val_every") t.val_every = to_int(full, value);
    else if (key == "val_episodes") t.val_episodes = to_int(full, value);
    else if (key == "pretrain_epochs") t.pretrain_epochs = to_int(full, value);
    else if (key == "pretrain_batch") t.pretrain_batch = to_int(full, value);
    else if (key == "pretrain_lr") t.pretrain_lr = to_double(full, value);
    else if (key == "pretrain_weight_decay") t.pretrain_weight_decay = to_double(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "evaluation") {
    if (key == "n_test_episodes") v.n_test_episodes = to_int(full, value);
    else if (key == "seeds") v.seeds = to_uint_list(full, value);
    else if (key == "threads") v.threads = to_int(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else if (section == "output") {
    if (key == "dir") o.dir = value;
    else if (key == "force") o.force = to_bool(full, value);
    else if (key == "resume") o.resume = to_bool(full, value);
    else throw ConfigError("config: unknown key '" + full + "'");
  } else {
    throw ConfigError("config: unknown section '" + section + "'");
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "manifest") {
    throw ConfigError("config: dataset.source must be synthetic or manifest");
  }
  if (method.name != "ours" && method.name != "visprod" && method.name != "le") {
    throw ConfigError("config: method.name must be ours, visprod or le");
  }
  if (evaluation.seeds.empty()) throw ConfigError("config: evaluation.seeds is empty");
  if (evaluation.n_test_episodes < 2) {
    throw ConfigError("config: evaluation.n_test_episodes must be at least 2");
  }
  if (evaluation.threads < 1) throw ConfigError("config: evaluation.threads must be >= 1");
  episode_config().validate();
}

SyntheticConfig ExperimentConfig::synthetic_config() const {
  SyntheticConfig s;
  s.n_type1 = dataset.n_type1;
  s.n_type2 = dataset.n_type2;
  s.samples_per_composition = dataset.samples_per_composition;
  s.image_size = dataset.image_size;
  s.noise_sigma = dataset.noise_sigma;
  s.placement_jitter = dataset.placement_jitter;
  s.background_amplitude = dataset.background_amplitude;
  s.seed = dataset.seed;
  return s;
}

EpisodeConfig ExperimentConfig::episode_config() const {
  return {episode.n_primitives, episode.support_per_class, episode.query_per_class,
          episode.max_attempts};
}

ArchConfig ExperimentConfig::arch_config() const {
  ArchConfig a;
  a.embedding_dim = dataset.embedding_dim;
  return a;
}

BackboneConfig ExperimentConfig::backbone_config() const {
  BackboneConfig b;
  b.image_size = dataset.image_size;
  return b;
}

TrainConfig ExperimentConfig::train_config(uint64_t seed) const {
  TrainConfig t;
  t.inner_lr = method.inner_lr;
  t.outer_lr = training.outer_lr;
  t.inner_steps = method.inner_steps;
  t.max_episodes = training.max_episodes;
  t.weight_decay = training.weight_decay;
  t.second_order = method.second_order;
  t.bilevel = method.bilevel;
  t.mixup = method.mixup;
  t.mixup_alpha = method.mixup_alpha;
  t.val_every = training.val_every;
  t.val_episodes = training.val_episodes;
  t.seed = seed;
  return t;
}

PretrainConfig ExperimentConfig::pretrain_config(uint64_t seed) const {
  PretrainConfig p;
  p.epochs = training.pretrain_epochs;
  p.batch_size = training.pretrain_batch;
  p.lr = training.pretrain_lr;
  p.weight_decay = training.pretrain_weight_decay;
  p.seed = seed;
  return p;
}

BaselineConfig ExperimentConfig::baseline_config() const {
  return {method.fit_iters, method.fit_batch, method.fit_lr, method.fit_weight_decay};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  ExperimentConfig cfg;
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']') {
        throw ConfigError("config " + path.string() + ":" + std::to_string(line_no) +
                          ": malformed section header");
      }
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config " + path.string() + ":" + std::to_string(line_no) +
                        ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError("config " + path.string() + ":" + std::to_string(line_no) +
                        ": key outside any section");
    }
    set_key(cfg, section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  return cfg;
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  size_t eq = assignment.find('=');
  size_t dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  set_key(cfg, trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)),
          trim(assignment.substr(eq + 1)));
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out.precision(17);
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "[dataset]\n";
  out << "source = " << cfg.dataset.source << "\n";
  out << "dir = " << cfg.dataset.dir << "\n";
  out << "n_type1 = " << cfg.dataset.n_type1 << "\n";
  out << "n_type2 = " << cfg.dataset.n_type2 << "\n";
  out << "samples_per_composition = " << cfg.dataset.samples_per_composition << "\n";
  out << "image_size = " << cfg.dataset.image_size << "\n";
  out << "noise_sigma = " << cfg.dataset.noise_sigma << "\n";
  out << "placement_jitter = " << cfg.dataset.placement_jitter << "\n";
  out << "background_amplitude = " << cfg.dataset.background_amplitude << "\n";
  out << "embedding_dim = " << cfg.dataset.embedding_dim << "\n";
  out << "seed = " << cfg.dataset.seed << "\n";
  out << "\n[episode]\n";
  out << "n_primitives = " << cfg.episode.n_primitives << "\n";
  out << "support_per_class = " << cfg.episode.support_per_class << "\n";
  out << "query_per_class = " << cfg.episode.query_per_class << "\n";
  out << "max_attempts = " << cfg.episode.max_attempts << "\n";
  out << "\n[method]\n";
  out << "name = " << cfg.method.name << "\n";
  out << "second_order = " << b(cfg.method.second_order) << "\n";
  out << "bilevel = " << b(cfg.method.bilevel) << "\n";
  out << "mixup = " << b(cfg.method.mixup) << "\n";
  out << "mixup_alpha = " << cfg.method.mixup_alpha << "\n";
  out << "inner_lr = " << cfg.method.inner_lr << "\n";
  out << "inner_steps = " << cfg.method.inner_steps << "\n";
  out << "fit_iters = " << cfg.method.fit_iters << "\n";
  out << "fit_batch = " << cfg.method.fit_batch << "\n";
  out << "fit_lr = " << cfg.method.fit_lr << "\n";
  out << "fit_weight_decay = " << cfg.method.fit_weight_decay << "\n";
  out << "le_embed_dim = " << cfg.method.le_embed_dim << "\n";
  out << "\n[training]\n";
  out << "outer_lr = " << cfg.training.outer_lr << "\n";
  out << "weight_decay = " << cfg.training.weight_decay << "\n";
  out << "max_episodes = " << cfg.training.max_episodes << "\n";
  out << "val_every = " << cfg.training.val_every << "\n";
  out << "val_episodes = " << cfg.training.val_episodes << "\n";
  out << "pretrain_epochs = " << cfg.training.pretrain_epochs << "\n";
  out << "pretrain_batch = " << cfg.training.pretrain_batch << "\n";
  out << "pretrain_lr = " << cfg.training.pretrain_lr << "\n";
  out << "pretrain_weight_decay = " << cfg.training.pretrain_weight_decay << "\n";
  out << "\n[evaluation]\n";
  out << "n_test_episodes = " << cfg.evaluation.n_test_episodes << "\n";
  out << "seeds = ";
  for (size_t i = 0; i < cfg.evaluation.seeds.size(); ++i) {
    if (i) out << ",";
    out << cfg.evaluation.seeds[i];
  }
  out << "\n";
  out << "threads = " << cfg.evaluation.threads << "\n";
  out << "\n[output]\n";
  out << "dir = " << cfg.output.dir << "\n";
  out << "force = " << b(cfg.output.force) << "\n";
  out << "resume = " << b(cfg.output.resume) << "\n";
  return out.str();
}

}  // namespace czsl::cli
