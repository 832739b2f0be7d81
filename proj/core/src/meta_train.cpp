#include "czsl/meta_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "czsl/errors.hpp"

namespace czsl {

namespace {

constexpr int64_t kCacheChunk = 256;

CompGraph episode_graph(const Episode& episode, const Dataset& ds,
                        const EmbeddingProvider& provider) {
  return build_graph(episode.p1, episode.p2, ds, provider);
}

Tensor one_hot_targets(const Episode& episode,
                       const std::vector<std::pair<int64_t, Composition>>& samples) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(samples.size()), episode.grid_size()});
  for (size_t i = 0; i < samples.size(); ++i) {
    t.at(static_cast<int64_t>(i), episode.grid_index(samples[i].second)) = 1.0;
  }
  return t;
}

Tensor stack_soft_labels(const std::vector<AugmentedQuery>& aug) {
  Tensor t = Tensor::zeros({static_cast<int64_t>(aug.size()), aug[0].soft_label.size()});
  for (size_t i = 0; i < aug.size(); ++i) {
    for (int64_t k = 0; k < aug[i].soft_label.size(); ++k) {
      t.at(static_cast<int64_t>(i), k) = aug[i].soft_label[k];
    }
  }
  return t;
}

// theta' leaves after `steps` taped updates on the support loss.
VarTree taped_inner_update(Graph& g, const VarTree& theta, const ScoreBatch& support,
                           Var support_targets, const ArchConfig& arch, double eps, int64_t steps,
                           bool second_order, double* first_loss) {
  VarTree current = theta;
  for (int64_t s = 0; s < steps; ++s) {
    Var loss = build_set_loss(g, current, support, support_targets, arch);
    if (s == 0 && first_loss != nullptr) *first_loss = loss.value().item();
    std::vector<Var> grads = g.backward(loss, current.vars());
    VarTree next;
    size_t i = 0;
    for (const auto& [name, var] : current.leaves()) {
      Var step_grad = second_order ? grads[i] : detach(grads[i]);
      next.set(name, sub(var, scale(step_grad, eps)));
      ++i;
    }
    current = std::move(next);
  }
  return current;
}

Var l2_penalty(Graph& g, const VarTree& theta) {
  Var acc;
  bool first = true;
  for (const auto& [name, var] : theta.leaves()) {
    Var term = sum_all(mul(var, var));
    acc = first ? term : add(acc, term);
    first = false;
  }
  (void)g;
  return acc;
}

struct AdamState {
  ParamTree m;
  ParamTree v;
  int64_t t = 0;
};

void adam_step(ParamTree& params, const ParamTree& grads, AdamState& state, double lr,
               double weight_decay) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  state.t += 1;
  double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
  double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
  auto gi = grads.begin();
  auto mi = state.m.begin();
  auto vi = state.v.begin();
  for (auto& [name, p] : params) {
    const Tensor& g = gi->second;
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (int64_t k = 0; k < p.size(); ++k) {
      double grad = g[k] + weight_decay * p[k];
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * grad;
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * grad * grad;
      double mh = m[k] / bias1;
      double vh = v[k] / bias2;
      p[k] -= lr * mh / (std::sqrt(vh) + kEps);
    }
    ++gi;
    ++mi;
    ++vi;
  }
}

}  // namespace

FeatureCache::FeatureCache(const Backbone& backbone, const Dataset& ds) {
  const std::vector<Sample>& samples = ds.samples();
  for (size_t start = 0; start < samples.size(); start += kCacheChunk) {
    size_t stop = std::min(samples.size(), start + kCacheChunk);
    std::vector<const Tensor*> images;
    images.reserve(stop - start);
    for (size_t i = start; i < stop; ++i) images.push_back(&samples[i].image);
    Tensor rows = backbone.pooled_batch(images);
    for (size_t i = start; i < stop; ++i) {
      Tensor row = Tensor::zeros({rows.dim(1)});
      for (int64_t k = 0; k < rows.dim(1); ++k) row[k] = rows.at(static_cast<int64_t>(i - start), k);
      pooled_[samples[i].id] = std::move(row);
    }
  }
}

const Tensor& FeatureCache::pooled(int64_t sample_id) const {
  auto it = pooled_.find(sample_id);
  if (it == pooled_.end()) {
    throw DataError("feature cache: no features for sample " + std::to_string(sample_id));
  }
  return it->second;
}

Tensor FeatureCache::pooled_rows(
    const std::vector<std::pair<int64_t, Composition>>& samples) const {
  if (samples.empty()) throw DataError("feature cache: empty sample list");
  int64_t c = pooled(samples[0].first).size();
  Tensor rows = Tensor::zeros({static_cast<int64_t>(samples.size()), c});
  for (size_t i = 0; i < samples.size(); ++i) {
    const Tensor& p = pooled(samples[i].first);
    for (int64_t k = 0; k < c; ++k) rows.at(static_cast<int64_t>(i), k) = p[k];
  }
  return rows;
}

PretrainOutcome pretrain_backbone(const Dataset& ds, Split base_split, const BackboneConfig& cfg,
                                  const PretrainConfig& train) {
  std::vector<Composition> classes = ds.compositions_in(base_split);
  if (classes.empty()) throw DataError("pretrain: base split is empty");
  std::sort(classes.begin(), classes.end());
  std::map<Composition, int64_t> class_of;
  for (size_t i = 0; i < classes.size(); ++i) class_of[classes[i]] = static_cast<int64_t>(i);
  const int64_t n_classes = static_cast<int64_t>(classes.size());

  std::vector<int64_t> sample_ids;
  for (const Composition& c : classes) {
    for (int64_t id : ds.samples_of(c)) sample_ids.push_back(id);
  }

  Backbone net = Backbone::random_init(cfg, rng::derive_seed(train.seed, "backbone-init"));
  ParamTree params = net.params();
  {
    rng::Engine eng = rng::make_engine(rng::derive_seed(train.seed, "head-init"));
    double bound = std::sqrt(6.0 / static_cast<double>(cfg.channels + n_classes));
    Tensor w = Tensor::zeros({cfg.channels, n_classes});
    for (int64_t i = 0; i < w.size(); ++i) w[i] = rng::uniform(eng, -bound, bound);
    params.set("head.w", std::move(w));
    params.set("head.b", Tensor::zeros({n_classes}));
  }

  AdamState adam{ParamTree::zeros_like(params), ParamTree::zeros_like(params), 0};
  rng::Engine shuffle_eng = rng::make_engine(rng::derive_seed(train.seed, "pretrain-shuffle"));
  double last_epoch_accuracy = 0.0;

  for (int64_t epoch = 0; epoch < train.epochs; ++epoch) {
    rng::shuffle(sample_ids, shuffle_eng);
    int64_t correct = 0, total = 0;
    for (size_t start = 0; start < sample_ids.size();
         start += static_cast<size_t>(train.batch_size)) {
      size_t stop = std::min(sample_ids.size(), start + static_cast<size_t>(train.batch_size));
      Graph g;
      VarTree vars(g, params);
      Var loss_sum;
      bool first = true;
      for (size_t i = start; i < stop; ++i) {
        const Sample& s = ds.sample(sample_ids[i]);
        Var fmap = backbone_forward_taped(g, vars, g.value(s.image), cfg);
        Var pooled = reshape(gap_spatial(fmap), {1, cfg.channels});
        Var scores = affine(pooled, vars.at("head.w"), reshape(vars.at("head.b"), {1, n_classes}));
        int64_t label = class_of.at(s.label);
        Tensor target = Tensor::zeros({1, n_classes});
        target.at(0, label) = 1.0;
        Var ce = mean_cross_entropy_rows(scores, g.value(std::move(target)));
        loss_sum = first ? ce : add(loss_sum, ce);
        first = false;
        if (argmax_index(reshape(scores, {n_classes}).value()) == label) ++correct;
        ++total;
      }
      Var loss = scale(loss_sum, 1.0 / static_cast<double>(stop - start));
      std::vector<Var> grads = g.backward(loss, vars.vars());
      ParamTree grad_tree;
      size_t gi = 0;
      for (const auto& [name, v] : vars.leaves()) grad_tree.set(name, grads[gi++].value());
      adam_step(params, grad_tree, adam, train.lr, train.weight_decay);
    }
    last_epoch_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }

  ParamTree backbone_params;
  for (const auto& [name, t] : params) {
    if (name.rfind("head.", 0) != 0) backbone_params.set(name, t);
  }
  Backbone out(cfg, std::move(backbone_params), true);
  return {std::move(out), last_epoch_accuracy};
}

ParamTree adapt(const ParamTree& theta, const LossAndGrad& loss, double eps, int64_t steps) {
  ParamTree current = theta;
  for (int64_t s = 0; s < steps; ++s) {
    auto [value, grad] = loss(current);
    (void)value;
    current.add_scaled(grad, -eps);
  }
  return current;
}

namespace {

// Support-set loss and gradient at arbitrary parameters, on a scratch tape.
std::pair<double, ParamTree> support_loss_and_grad(const ParamTree& theta,
                                                   const ScoreBatch& support,
                                                   const Tensor& targets,
                                                   const ArchConfig& arch) {
  Graph g;
  VarTree vars(g, theta);
  Var loss = build_set_loss(g, vars, support, g.value(targets), arch);
  std::vector<Var> grads = g.backward(loss, vars.vars());
  ParamTree grad_tree;
  size_t i = 0;
  for (const auto& [name, v] : vars.leaves()) grad_tree.set(name, grads[i++].value());
  return {loss.value().item(), std::move(grad_tree)};
}

}  // namespace

ParamTree inner_adapt(const Model& model, const FeatureCache& cache, const Dataset& ds,
                      const Episode& episode, double eps, int64_t steps) {
  EmbeddingProvider provider = model.provider();
  CompGraph graph = episode_graph(episode, ds, provider);
  ScoreBatch support = make_score_batch(graph, cache.pooled_rows(episode.support));
  Tensor targets = one_hot_targets(episode, episode.support);
  return adapt(
      model.theta,
      [&](const ParamTree& t) { return support_loss_and_grad(t, support, targets, model.arch); },
      eps, steps);
}

OuterStepInfo outer_step(Model& model, const FeatureCache& cache, const Dataset& ds,
                         const Episode& episode, const TrainConfig& cfg, rng::Engine& mixup_eng) {
  EmbeddingProvider provider = model.provider();
  CompGraph graph = episode_graph(episode, ds, provider);
  ScoreBatch support = make_score_batch(graph, cache.pooled_rows(episode.support));
  Tensor support_targets = one_hot_targets(episode, episode.support);

  // Query side, augmented or plain.
  ScoreBatch query = support;  // shares graph constants
  Tensor query_targets;
  if (cfg.mixup) {
    std::vector<AugmentedQuery> aug =
        augment_query(episode, ds, MixupConfig{cfg.mixup_alpha}, mixup_eng);
    std::vector<const Tensor*> images;
    images.reserve(aug.size());
    for (const AugmentedQuery& a : aug) images.push_back(&a.image);
    query.pooled = model.backbone.pooled_batch(images);
    query_targets = stack_soft_labels(aug);
  } else {
    query.pooled = cache.pooled_rows(episode.query);
    query_targets = one_hot_targets(episode, episode.query);
  }

  Graph g;
  VarTree theta_vars(g, model.theta);
  OuterStepInfo info;

  Var total;
  if (cfg.bilevel) {
    VarTree adapted = taped_inner_update(g, theta_vars, support, g.value(support_targets),
                                         model.arch, cfg.inner_lr, cfg.inner_steps,
                                         cfg.second_order, &info.inner_loss);
    Var query_loss = build_set_loss(g, adapted, query, g.value(query_targets), model.arch);
    info.outer_loss = query_loss.value().item();
    total = add(query_loss, scale(l2_penalty(g, theta_vars), 0.5 * cfg.weight_decay));
  } else {
    // Joint loss over support and augmented query, no adaptation anywhere.
    Var support_loss = build_set_loss(g, theta_vars, support, g.value(support_targets), model.arch);
    Var query_loss = build_set_loss(g, theta_vars, query, g.value(query_targets), model.arch);
    int64_t n_s = support.pooled.dim(0), n_q = query.pooled.dim(0);
    double w_s = static_cast<double>(n_s) / static_cast<double>(n_s + n_q);
    Var joint = add(scale(support_loss, w_s), scale(query_loss, 1.0 - w_s));
    info.inner_loss = support_loss.value().item();
    info.outer_loss = query_loss.value().item();
    total = add(joint, scale(l2_penalty(g, theta_vars), 0.5 * cfg.weight_decay));
  }

  std::vector<Var> grads = g.backward(total, theta_vars.vars());
  size_t i = 0;
  for (const auto& [name, v] : theta_vars.leaves()) {
    model.theta.at(name).add_scaled(grads[i++].value(), -cfg.outer_lr);
  }
  return info;
}

std::vector<Composition> infer_episode(const Model& model, const FeatureCache& cache,
                                       const Dataset& ds, const Episode& episode) {
  EmbeddingProvider provider = model.provider();
  CompGraph graph = episode_graph(episode, ds, provider);
  ParamTree adapted = model.adapt_at_test
                          ? inner_adapt(model, cache, ds, episode, model.inner_lr,
                                        model.inner_steps)
                          : model.theta;

  ScoreBatch query = make_score_batch(graph, cache.pooled_rows(episode.query));
  Graph g;
  VarTree vars(g, adapted);
  Tensor scores = build_scores(g, vars, query, model.arch).value();

  std::vector<Composition> predictions;
  predictions.reserve(episode.query.size());
  for (int64_t row = 0; row < scores.dim(0); ++row) {
    int64_t best = 0;
    for (int64_t c = 1; c < scores.dim(1); ++c) {
      if (scores.at(row, c) > scores.at(row, best)) best = c;
    }
    predictions.push_back(episode.grid_composition(best));
  }
  return predictions;
}

namespace {

struct TrainState {
  int64_t next_episode = 1;
  double best_val_hm = -1.0;
  int64_t best_episode = 0;
  bool has_best = false;
  std::string sampler_state;
  std::string mixup_state;
  std::vector<TrainLogEntry> log;
};

void save_train_state(const TrainCheckpointing& ckpt, const TrainState& st,
                      const ParamTree& theta, const ParamTree& best_theta) {
  nlohmann::ordered_json j;
  j["next_episode"] = st.next_episode;
  j["best_val_hm"] = st.best_val_hm;
  j["best_episode"] = st.best_episode;
  j["has_best"] = st.has_best;
  j["sampler_state"] = st.sampler_state;
  j["mixup_state"] = st.mixup_state;
  nlohmann::ordered_json log = nlohmann::ordered_json::array();
  for (const TrainLogEntry& e : st.log) {
    log.push_back({{"episode", e.episode},
                   {"inner_loss", e.inner_loss},
                   {"outer_loss", e.outer_loss},
                   {"has_validation", e.has_validation},
                   {"val_hm", e.val_hm}});
  }
  j["log"] = std::move(log);
  std::ofstream out(ckpt.state_file, std::ios::trunc);
  if (!out) throw DataError("train state: cannot write '" + ckpt.state_file.string() + "'");
  out << j.dump();
  theta.save(ckpt.state_file.string() + ".theta");
  best_theta.save(ckpt.state_file.string() + ".best");
}

bool load_train_state(const TrainCheckpointing& ckpt, TrainState& st, ParamTree& theta,
                      ParamTree& best_theta) {
  std::ifstream in(ckpt.state_file);
  if (!in) return false;
  nlohmann::json j = nlohmann::json::parse(in);
  st.next_episode = j.at("next_episode").get<int64_t>();
  st.best_val_hm = j.at("best_val_hm").get<double>();
  st.best_episode = j.at("best_episode").get<int64_t>();
  st.has_best = j.at("has_best").get<bool>();
  st.sampler_state = j.at("sampler_state").get<std::string>();
  st.mixup_state = j.at("mixup_state").get<std::string>();
  st.log.clear();
  for (const auto& e : j.at("log")) {
    st.log.push_back({e.at("episode").get<int64_t>(), e.at("inner_loss").get<double>(),
                      e.at("outer_loss").get<double>(), e.at("has_validation").get<bool>(),
                      e.at("val_hm").get<double>()});
  }
  theta = ParamTree::load(ckpt.state_file.string() + ".theta");
  best_theta = ParamTree::load(ckpt.state_file.string() + ".best");
  return true;
}

std::string engine_state(const rng::Engine& eng) {
  std::ostringstream out;
  out << eng;
  return out.str();
}

void restore_engine(rng::Engine& eng, const std::string& state) {
  std::istringstream in(state);
  in >> eng;
}

}  // namespace

TrainResult train(const Dataset& ds, const EpisodeConfig& episode_cfg, const ArchConfig& arch,
                  const Backbone& backbone, const TrainConfig& cfg,
                  const std::optional<TrainCheckpointing>& checkpointing) {
  Model model;
  model.arch = arch;
  model.theta = init_theta(arch, rng::derive_seed(cfg.seed, "theta-init"));
  model.backbone = backbone;
  model.embedding_seed = rng::derive_seed(cfg.seed, "embeddings");
  model.inner_lr = cfg.inner_lr;
  model.inner_steps = cfg.inner_steps;
  model.adapt_at_test = cfg.bilevel;

  FeatureCache cache(backbone, ds);
  rng::Engine sampler_eng = rng::make_engine(rng::derive_seed(cfg.seed, "train-sampler"));
  rng::Engine mixup_eng = rng::make_engine(rng::derive_seed(cfg.seed, "mixup"));
  const uint64_t val_seed = rng::derive_seed(cfg.seed, "val-sampler");

  TrainState st;
  ParamTree best_theta = model.theta;
  if (checkpointing && checkpointing->resume) {
    if (load_train_state(*checkpointing, st, model.theta, best_theta)) {
      restore_engine(sampler_eng, st.sampler_state);
      restore_engine(mixup_eng, st.mixup_state);
    }
  }

  auto run_validation = [&](int64_t round) -> double {
    rng::Engine val_eng = rng::make_engine(rng::derive_seed(val_seed, static_cast<uint64_t>(round)));
    std::vector<EpisodeResult> results;
    results.reserve(static_cast<size_t>(cfg.val_episodes));
    for (int64_t v = 0; v < cfg.val_episodes; ++v) {
      Episode ep = sample_episode(ds, Split::kVal, episode_cfg, val_eng);
      results.push_back(make_result(ep, infer_episode(model, cache, ds, ep)));
    }
    return aggregate(results).hm;
  };

  for (int64_t ep = st.next_episode; ep <= cfg.max_episodes; ++ep) {
    Episode episode = sample_episode(ds, Split::kTrain, episode_cfg, sampler_eng);
    OuterStepInfo info = outer_step(model, cache, ds, episode, cfg, mixup_eng);
    TrainLogEntry entry{ep, info.inner_loss, info.outer_loss, false, 0.0};

    bool validate = cfg.val_every > 0 && (ep % cfg.val_every == 0 || ep == cfg.max_episodes);
    if (validate) {
      double hm = run_validation(ep / std::max<int64_t>(cfg.val_every, 1));
      entry.has_validation = true;
      entry.val_hm = hm;
      if (hm > st.best_val_hm) {
        st.best_val_hm = hm;
        st.best_episode = ep;
        st.has_best = true;
        best_theta = model.theta;
      }
      if (checkpointing) {
        st.next_episode = ep + 1;
        st.sampler_state = engine_state(sampler_eng);
        st.mixup_state = engine_state(mixup_eng);
        st.log.push_back(entry);
        save_train_state(*checkpointing, st, model.theta, best_theta);
        st.log.pop_back();
      }
    }
    st.log.push_back(entry);
  }

  TrainResult result;
  result.model = std::move(model);
  if (st.has_best) {
    result.model.theta = std::move(best_theta);
    result.best_val_hm = st.best_val_hm;
    result.best_episode = st.best_episode;
  } else {
    result.best_val_hm = 0.0;
    result.best_episode = cfg.max_episodes;
  }
  result.log = std::move(st.log);
  return result;
}

}  // namespace czsl
