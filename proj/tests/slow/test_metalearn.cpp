#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "czsl/baselines.hpp"
#include "czsl/meta_train.hpp"
#include "czsl/synthetic.hpp"
#include "../testutil.hpp"

using namespace czsl;

namespace {

// Small world shared by the behavioral tests: 4x4 primitives per split,
// 8x8 images, mild noise. Built once; tests never mutate it.
SyntheticConfig world_cfg() {
  SyntheticConfig cfg;
  cfg.n_type1 = 4;
  cfg.n_type2 = 4;
  cfg.samples_per_composition = 12;
  cfg.image_size = 8;
  cfg.noise_sigma = 0.02;
  cfg.seed = 1000;
  return cfg;
}

BackboneConfig small_backbone() {
  BackboneConfig cfg;
  cfg.image_size = 8;
  cfg.channels = 12;
  return cfg;
}

ArchConfig small_arch() {
  ArchConfig arch;
  arch.embedding_dim = 8;
  arch.gcn_hidden = 12;
  arch.shared_dim = 10;
  arch.backbone_channels = 12;
  arch.corr_hidden = 10;
  arch.embed_hidden = 10;
  return arch;
}

EpisodeConfig small_episode() {
  EpisodeConfig cfg;
  cfg.n_primitives = 2;
  cfg.support_per_class = 3;
  cfg.query_per_class = 3;
  return cfg;
}

struct World {
  Dataset ds;
  Backbone backbone;
  FeatureCache cache;
  double pretrain_accuracy;
};

World make_world() {
  Dataset ds = generate_benchmark(world_cfg());
  PretrainConfig pt;
  pt.epochs = 3;
  pt.batch_size = 32;
  pt.seed = 1000;
  PretrainOutcome outcome = pretrain_backbone(ds, Split::kTrain, small_backbone(), pt);
  FeatureCache cache(outcome.backbone, ds);
  return {std::move(ds), std::move(outcome.backbone), std::move(cache),
          outcome.final_train_accuracy};
}

const World& world() {
  static World w = make_world();
  return w;
}

Model make_model(uint64_t seed, const TrainConfig& cfg) {
  Model m;
  m.arch = small_arch();
  m.theta = init_theta(m.arch, rng::derive_seed(seed, "theta-init"));
  m.backbone = world().backbone;
  m.embedding_seed = rng::derive_seed(seed, "embeddings");
  m.inner_lr = cfg.inner_lr;
  m.inner_steps = cfg.inner_steps;
  m.adapt_at_test = cfg.bilevel;
  return m;
}

Episode fixed_episode(uint64_t seed) {
  rng::Engine eng = rng::make_engine(seed);
  return sample_episode(world().ds, Split::kTrain, small_episode(), eng);
}

double support_loss(const Model& model, const Episode& ep, const ParamTree& theta) {
  CompGraph graph = build_graph(ep.p1, ep.p2, world().ds, model.provider());
  ScoreBatch batch = make_score_batch(graph, world().cache.pooled_rows(ep.support));
  Tensor targets = Tensor::zeros({static_cast<int64_t>(ep.support.size()), ep.grid_size()});
  for (size_t i = 0; i < ep.support.size(); ++i) {
    targets.at(static_cast<int64_t>(i), ep.grid_index(ep.support[i].second)) = 1.0;
  }
  Graph g;
  VarTree vars(g, theta);
  return build_set_loss(g, vars, batch, g.value(targets), model.arch).value().item();
}

}  // namespace

TEST_CASE("pretraining beats chance and is seed-deterministic") {
  CHECK(world().pretrain_accuracy > 3.0 / 16.0);  // chance is 1/16

  PretrainConfig pt;
  pt.epochs = 1;
  pt.batch_size = 32;
  pt.seed = 77;
  PretrainOutcome a = pretrain_backbone(world().ds, Split::kTrain, small_backbone(), pt);
  PretrainOutcome b = pretrain_backbone(world().ds, Split::kTrain, small_backbone(), pt);
  CHECK(a.backbone.params() == b.backbone.params());
  CHECK(a.backbone.finalized());
  for (const auto& [name, t] : a.backbone.params()) {
    CHECK(name.rfind("head.", 0) != 0);  // classifier head is gone
  }
}

TEST_CASE("episodic updates never touch the backbone") {
  TrainConfig cfg;
  cfg.outer_lr = 0.05;
  Model model = make_model(31, cfg);
  ParamTree backbone_before = model.backbone.params();
  Episode ep = fixed_episode(32);
  rng::Engine mixup_eng = rng::make_engine(33);
  for (int i = 0; i < 3; ++i) outer_step(model, world().cache, world().ds, ep, cfg, mixup_eng);
  CHECK(model.backbone.params() == backbone_before);
}

TEST_CASE("adapt: zero step size returns identical parameters") {
  rng::Engine eng = rng::make_engine(1);
  ParamTree theta;
  theta.set("w", czsl::test::random_normal_tensor({4, 3}, eng));
  LossAndGrad quadratic = [](const ParamTree& t) {
    ParamTree grad = t;  // gradient of ||t||^2/2 is t
    return std::make_pair(0.5 * t.squared_l2_norm(), grad);
  };
  CHECK(adapt(theta, quadratic, 0.0, 1) == theta);

  ParamTree stepped = adapt(theta, quadratic, 0.25, 1);
  for (const auto& [name, t] : stepped) {
    const Tensor& orig = theta.at(name);
    for (int64_t i = 0; i < t.size(); ++i) {
      CHECK(t[i] == doctest::Approx(0.75 * orig[i]).epsilon(1e-14));
    }
  }

  ParamTree twice = adapt(theta, quadratic, 0.25, 2);
  for (const auto& [name, t] : twice) {
    const Tensor& orig = theta.at(name);
    for (int64_t i = 0; i < t.size(); ++i) {
      CHECK(t[i] == doctest::Approx(0.5625 * orig[i]).epsilon(1e-14));
    }
  }
}

TEST_CASE("one adaptation step decreases the support loss for small step sizes") {
  TrainConfig cfg;
  Model model = make_model(5, cfg);
  Episode ep = fixed_episode(6);

  double before = support_loss(model, ep, model.theta);
  bool decreased = false;
  for (double eps : {0.4, 0.2, 0.1, 0.05, 0.025}) {
    ParamTree adapted = inner_adapt(model, world().cache, world().ds, ep, eps, 1);
    if (support_loss(model, ep, adapted) < before) {
      decreased = true;
      break;
    }
  }
  CHECK(decreased);
}

TEST_CASE("outer step: zero meta step size leaves parameters untouched") {
  TrainConfig cfg;
  cfg.outer_lr = 0.0;
  Model model = make_model(7, cfg);
  ParamTree before = model.theta;
  Episode ep = fixed_episode(8);
  rng::Engine mixup_eng = rng::make_engine(9);
  outer_step(model, world().cache, world().ds, ep, cfg, mixup_eng);
  CHECK(model.theta == before);
}

TEST_CASE("first-order outer gradient equals the query gradient at the adapted point") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.mixup = false;  // deterministic query targets
  cfg.outer_lr = 0.01;
  Model model = make_model(11, cfg);
  Episode ep = fixed_episode(12);

  ParamTree before = model.theta;
  rng::Engine mixup_eng = rng::make_engine(13);
  outer_step(model, world().cache, world().ds, ep, cfg, mixup_eng);

  // independent route: adapt, then differentiate the query loss at theta'
  Model probe = model;
  probe.theta = before;
  ParamTree adapted =
      inner_adapt(probe, world().cache, world().ds, ep, cfg.inner_lr, cfg.inner_steps);
  CompGraph graph = build_graph(ep.p1, ep.p2, world().ds, model.provider());
  ScoreBatch query = make_score_batch(graph, world().cache.pooled_rows(ep.query));
  Tensor targets = Tensor::zeros({static_cast<int64_t>(ep.query.size()), ep.grid_size()});
  for (size_t i = 0; i < ep.query.size(); ++i) {
    targets.at(static_cast<int64_t>(i), ep.grid_index(ep.query[i].second)) = 1.0;
  }
  Graph g;
  VarTree vars(g, adapted);
  Var loss = build_set_loss(g, vars, query, g.value(targets), model.arch);
  std::vector<Var> grads = g.backward(loss, vars.vars());

  size_t i = 0;
  for (const auto& [name, v] : vars.leaves()) {
    const Tensor& applied = model.theta.at(name);
    const Tensor& original = before.at(name);
    const Tensor& direct = grads[i++].value();
    for (int64_t k = 0; k < direct.size(); ++k) {
      double update = (original[k] - applied[k]) / cfg.outer_lr;
      CHECK(update == doctest::Approx(direct[k]).epsilon(1e-9));
    }
  }
}

TEST_CASE("second-order and first-order gradients differ by O(step size)") {
  Episode ep = fixed_episode(14);

  auto update_norm_diff = [&](double eps) {
    TrainConfig cfg;
    cfg.inner_lr = eps;
    cfg.outer_lr = 1.0;  // update equals the gradient
    cfg.weight_decay = 0.0;
    cfg.mixup = false;
    Model fo = make_model(15, cfg);
    Model so = make_model(15, cfg);
    TrainConfig cfg_so = cfg;
    cfg_so.second_order = true;
    rng::Engine e1 = rng::make_engine(16), e2 = rng::make_engine(16);
    outer_step(fo, world().cache, world().ds, ep, cfg, e1);
    outer_step(so, world().cache, world().ds, ep, cfg_so, e2);
    double acc = 0.0;
    for (const auto& [name, t] : fo.theta) {
      const Tensor& other = so.theta.at(name);
      for (int64_t k = 0; k < t.size(); ++k) acc += (t[k] - other[k]) * (t[k] - other[k]);
    }
    return std::sqrt(acc);
  };

  double diff_full = update_norm_diff(0.2);
  double diff_half = update_norm_diff(0.1);
  CHECK(diff_full > 0.0);
  CHECK(diff_half < 0.75 * diff_full);  // shrinks roughly linearly
  CHECK(diff_half > 0.25 * diff_full);
}

TEST_CASE("first-order equals exact mode when the inner step size is zero") {
  Episode ep = fixed_episode(17);
  TrainConfig cfg;
  cfg.inner_lr = 0.0;
  cfg.outer_lr = 0.05;
  cfg.mixup = false;
  Model fo = make_model(18, cfg);
  Model so = make_model(18, cfg);
  TrainConfig cfg_so = cfg;
  cfg_so.second_order = true;
  rng::Engine e1 = rng::make_engine(19), e2 = rng::make_engine(19);
  outer_step(fo, world().cache, world().ds, ep, cfg, e1);
  outer_step(so, world().cache, world().ds, ep, cfg_so, e2);
  for (const auto& [name, t] : fo.theta) {
    CHECK(max_abs_diff(t, so.theta.at(name)) <= 1e-10);
  }
}

TEST_CASE("train: zero episodes returns the initialized model untouched") {
  TrainConfig cfg;
  cfg.max_episodes = 0;
  cfg.seed = 21;
  TrainResult result = train(world().ds, small_episode(), small_arch(), world().backbone, cfg);
  CHECK(result.log.empty());
  CHECK(result.model.theta == init_theta(small_arch(), rng::derive_seed(21, "theta-init")));
}

TEST_CASE("train: log has one monotone entry per episode") {
  TrainConfig cfg;
  cfg.max_episodes = 12;
  cfg.val_every = 6;
  cfg.val_episodes = 3;
  cfg.seed = 22;
  TrainResult result = train(world().ds, small_episode(), small_arch(), world().backbone, cfg);
  REQUIRE(result.log.size() == 12);
  for (size_t i = 0; i < result.log.size(); ++i) {
    CHECK(result.log[i].episode == static_cast<int64_t>(i + 1));
    CHECK(std::isfinite(result.log[i].outer_loss));
  }
  CHECK(result.log[5].has_validation);
  CHECK(result.log[11].has_validation);
}

TEST_CASE("train: zero step sizes leave the initialization untouched") {
  TrainConfig cfg;
  cfg.max_episodes = 5;
  cfg.inner_lr = 0.0;
  cfg.outer_lr = 0.0;
  cfg.weight_decay = 0.0;
  cfg.val_every = 0;
  cfg.seed = 23;
  TrainResult result = train(world().ds, small_episode(), small_arch(), world().backbone, cfg);
  CHECK(result.model.theta == init_theta(small_arch(), rng::derive_seed(23, "theta-init")));
}

TEST_CASE("inference: deterministic, in-grid, leaves the model bit-identical") {
  TrainConfig cfg;
  Model model = make_model(25, cfg);
  ParamTree before = model.theta;

  rng::Engine eng = rng::make_engine(26);
  Episode ep = sample_episode(world().ds, Split::kTest, small_episode(), eng);
  std::vector<Composition> a = infer_episode(model, world().cache, world().ds, ep);
  std::vector<Composition> b = infer_episode(model, world().cache, world().ds, ep);
  CHECK(a == b);
  for (const Composition& c : a) {
    CHECK(std::find(ep.p1.begin(), ep.p1.end(), c.p1) != ep.p1.end());
    CHECK(std::find(ep.p2.begin(), ep.p2.end(), c.p2) != ep.p2.end());
  }

  for (int rep = 0; rep < 1000; ++rep) {
    infer_episode(model, world().cache, world().ds, ep);
  }
  CHECK(model.theta == before);
}

TEST_CASE("support duplicates score at least as well as fresh seen queries") {
  TrainConfig cfg;
  cfg.max_episodes = 150;
  cfg.val_every = 0;
  cfg.outer_lr = 0.005;
  cfg.seed = 27;
  TrainResult trained = train(world().ds, small_episode(), small_arch(), world().backbone, cfg);
  const Model& model = trained.model;

  rng::Engine eng = rng::make_engine(28);
  double dup_correct = 0, dup_total = 0, fresh_correct = 0, fresh_total = 0;
  for (int rep = 0; rep < 100; ++rep) {
    Episode ep = sample_episode(world().ds, Split::kTest, small_episode(), eng);
    std::vector<Composition> fresh = infer_episode(model, world().cache, world().ds, ep);
    for (size_t i = 0; i < ep.query.size(); ++i) {
      if (!ep.is_unseen(ep.query[i].second)) {
        ++fresh_total;
        if (fresh[i] == ep.query[i].second) ++fresh_correct;
      }
    }
    // diagnostic episode: seen-composition queries replaced by support samples
    Episode dup = ep;
    for (auto& q : dup.query) {
      if (!dup.is_unseen(q.second)) {
        for (const auto& s : dup.support) {
          if (s.second == q.second) {
            q.first = s.first;
            break;
          }
        }
      }
    }
    std::vector<Composition> pred = infer_episode(model, world().cache, world().ds, dup);
    for (size_t i = 0; i < dup.query.size(); ++i) {
      if (!dup.is_unseen(dup.query[i].second)) {
        ++dup_total;
        if (pred[i] == dup.query[i].second) ++dup_correct;
      }
    }
  }
  CHECK(dup_total > 0);
  CHECK(dup_correct / dup_total >= fresh_correct / fresh_total - 1e-12);
}

TEST_CASE("training resumes from a saved state") {
  czsl::test::TempDir dir("resume");
  TrainConfig cfg;
  cfg.max_episodes = 10;
  cfg.val_every = 5;
  cfg.val_episodes = 2;
  cfg.seed = 29;

  TrainCheckpointing ckpt{dir.path() / "state.json", false};
  TrainConfig first_half = cfg;
  first_half.max_episodes = 5;
  train(world().ds, small_episode(), small_arch(), world().backbone, first_half, ckpt);
  CHECK(std::filesystem::exists(dir.path() / "state.json"));

  TrainCheckpointing resume{dir.path() / "state.json", true};
  TrainResult resumed =
      train(world().ds, small_episode(), small_arch(), world().backbone, cfg, resume);
  CHECK(resumed.log.size() == 10);
  CHECK(resumed.log.front().episode == 1);
  CHECK(resumed.log.back().episode == 10);
}
