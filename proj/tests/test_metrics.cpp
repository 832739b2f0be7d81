#include <doctest.h>

#include <cmath>
#include <fstream>

#include "czsl/metrics.hpp"
#include "czsl/synthetic.hpp"
#include "testutil.hpp"

using namespace czsl;

namespace {

// Hand-built results with explicit seen/unseen flags and prediction classes.
QueryOutcome outcome(bool unseen, bool correct, PredictionClass pc = PredictionClass::kSeen) {
  QueryOutcome o;
  o.truth = {0, 1};
  o.predicted = correct ? o.truth : Composition{2, 3};
  o.truth_unseen = unseen;
  o.predicted_class = correct ? (unseen ? PredictionClass::kUnseen : PredictionClass::kSeen) : pc;
  return o;
}

EpisodeResult result_with(int seen_right, int seen_wrong, int unseen_right, int unseen_wrong,
                          PredictionClass wrong_class = PredictionClass::kSeen) {
  EpisodeResult r;
  for (int i = 0; i < seen_right; ++i) r.outcomes.push_back(outcome(false, true));
  for (int i = 0; i < seen_wrong; ++i) r.outcomes.push_back(outcome(false, false, wrong_class));
  for (int i = 0; i < unseen_right; ++i) r.outcomes.push_back(outcome(true, true));
  for (int i = 0; i < unseen_wrong; ++i) r.outcomes.push_back(outcome(true, false, wrong_class));
  return r;
}

}  // namespace

TEST_CASE("episode accuracy counts per partition") {
  auto [sa, ua] = episode_accuracy(result_with(4, 0, 2, 0));
  CHECK(sa == 1.0);
  CHECK(ua == 1.0);

  std::tie(sa, ua) = episode_accuracy(result_with(4, 0, 0, 2));
  CHECK(sa == 1.0);
  CHECK(ua == 0.0);

  std::tie(sa, ua) = episode_accuracy(result_with(3, 1, 1, 1));
  CHECK(sa == 0.75);
  CHECK(ua == 0.5);

  CHECK_THROWS_AS(episode_accuracy(result_with(3, 1, 0, 0)), NumericError);
}

TEST_CASE("harmonic mean formula and properties") {
  CHECK(harmonic_mean(19.01, 10.44) == doctest::Approx(13.47).epsilon(0.001));
  CHECK(harmonic_mean(42.0, 42.0) == 42.0);
  CHECK(harmonic_mean(37.0, 0.0) == 0.0);
  CHECK(harmonic_mean(0.0, 0.0) == 0.0);

  rng::Engine eng = rng::make_engine(90);
  for (int rep = 0; rep < 1000; ++rep) {
    double a = rng::uniform(eng, 0.0, 100.0);
    double b = rng::uniform(eng, 0.0, 100.0);
    double hm = harmonic_mean(a, b);
    CHECK(hm == harmonic_mean(b, a));
    CHECK(hm <= 2.0 * std::min(a, b) + 1e-12);
    CHECK(hm <= std::max(a, b) + 1e-12);
  }
}

TEST_CASE("aggregate matches an independent recomputation") {
  std::vector<EpisodeResult> results;
  results.push_back(result_with(3, 1, 1, 1));  // sa 75, ua 50
  results.push_back(result_with(4, 0, 0, 2));  // sa 100, ua 0
  results.push_back(result_with(2, 2, 1, 3));  // sa 50, ua 25

  MetricsReport report = aggregate(results);
  CHECK(report.n_episodes == 3);
  CHECK(report.sa == doctest::Approx(75.0).epsilon(1e-12));
  CHECK(report.ua == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(report.hm == doctest::Approx(2.0 * 75.0 * 25.0 / 100.0).epsilon(1e-12));
  // half-width: 1.96 * sd / sqrt(3); both accuracy columns have sd 25
  double expected_ci = 1.96 * 25.0 / std::sqrt(3.0);
  CHECK(report.sa_ci95 == doctest::Approx(expected_ci).epsilon(1e-12));
  CHECK(report.ua_ci95 == doctest::Approx(expected_ci).epsilon(1e-12));

  CHECK_THROWS_AS(aggregate({results[0]}), NumericError);
}

TEST_CASE("aggregate of identical episodes has zero width") {
  std::vector<EpisodeResult> results(5, result_with(3, 1, 1, 1));
  MetricsReport report = aggregate(results);
  CHECK(report.sa_ci95 == 0.0);
  CHECK(report.ua_ci95 == 0.0);
}

TEST_CASE("aggregate is permutation invariant") {
  std::vector<EpisodeResult> results;
  results.push_back(result_with(3, 1, 1, 1));
  results.push_back(result_with(4, 0, 0, 2));
  results.push_back(result_with(2, 2, 1, 3));
  MetricsReport a = aggregate(results);
  std::swap(results[0], results[2]);
  MetricsReport b = aggregate(results);
  CHECK(a.sa == b.sa);
  CHECK(a.ua == b.ua);
  CHECK(a.hm == b.hm);
  CHECK(a.sa_ci95 == b.sa_ci95);
}

TEST_CASE("error ratio buckets") {
  // 4 unseen errors to seen cells, 2 to wrong unseen cells
  std::vector<EpisodeResult> results;
  results.push_back(result_with(1, 0, 0, 4, PredictionClass::kSeen));
  results.push_back(result_with(1, 0, 0, 2, PredictionClass::kUnseen));
  ErrorRatio er = error_ratio(results);
  CHECK(er.defined);
  CHECK(er.value == 2.0);
  CHECK(er.unseen_to_seen == 4);
  CHECK(er.unseen_to_wrong_unseen == 2);

  // all unseen errors to seen: undefined ratio, count still reported
  er = error_ratio({result_with(1, 0, 0, 3, PredictionClass::kSeen)});
  CHECK_FALSE(er.defined);
  CHECK(er.unseen_to_seen == 3);

  // unfeasible predictions land in the third bucket only
  er = error_ratio({result_with(1, 0, 0, 2, PredictionClass::kUnfeasible)});
  CHECK_FALSE(er.defined);
  CHECK(er.unseen_to_seen == 0);
  CHECK(er.unseen_to_unfeasible == 2);
}

TEST_CASE("make_result classifies predictions against the episode") {
  Dataset ds = generate_synthetic(3, 3, 12, 8, 0.0, 91);
  EpisodeConfig cfg;
  cfg.n_primitives = 3;
  cfg.support_per_class = 3;
  cfg.query_per_class = 3;
  rng::Engine eng = rng::make_engine(92);
  Episode ep = sample_episode(ds, Split::kTrain, cfg, eng);

  std::vector<Composition> predictions;
  for (const auto& [id, c] : ep.query) predictions.push_back(c);
  EpisodeResult perfect = make_result(ep, predictions);
  auto [sa, ua] = episode_accuracy(perfect);
  CHECK(sa == 1.0);
  CHECK(ua == 1.0);
  // counts are exactly recoverable
  int64_t unseen_count = 0;
  for (const QueryOutcome& o : perfect.outcomes) unseen_count += o.truth_unseen ? 1 : 0;
  CHECK(unseen_count ==
        static_cast<int64_t>(ep.unseen.size()) * ep.query_per_class);

  predictions.assign(ep.query.size(), ep.seen.front());
  EpisodeResult all_seen = make_result(ep, predictions);
  for (const QueryOutcome& o : all_seen.outcomes) {
    CHECK(o.predicted_class == PredictionClass::kSeen);
  }

  predictions.pop_back();
  CHECK_THROWS_AS(make_result(ep, predictions), NumericError);
}

TEST_CASE("record files round-trip and render into a table") {
  ResultRecord r;
  r.method = "ours";
  r.dataset = "synthetic";
  r.n_primitives = 5;
  r.support_per_class = 5;
  r.query_per_class = 5;
  r.seed = 1;
  r.metrics.ua = 12.5;
  r.metrics.sa = 40.25;
  r.metrics.hm = harmonic_mean(40.25, 12.5);
  r.metrics.ua_ci95 = 1.5;
  r.metrics.sa_ci95 = 2.5;
  r.metrics.hm_ci95 = 1.0;
  r.metrics.n_episodes = 200;
  r.metrics.errors.defined = true;
  r.metrics.errors.value = 1.75;
  r.metrics.errors.unseen_to_seen = 7;
  r.metrics.errors.unseen_to_wrong_unseen = 4;

  ResultRecord r2 = r;
  r2.seed = 2;
  r2.metrics.ua = 14.5;
  r2.metrics.sa = 38.0;
  r2.metrics.hm = harmonic_mean(38.0, 14.5);

  czsl::test::TempDir dir("records");
  auto path = dir.path() / "results.jsonl";
  write_records({r, r2}, path, false);
  std::vector<ResultRecord> loaded = read_records(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].method == "ours");
  CHECK(loaded[0].metrics.ua == r.metrics.ua);
  CHECK(loaded[1].seed == 2);

  std::string table = render_table(loaded);
  CHECK(table.find("ours") != std::string::npos);
  CHECK(table.find("mean+-sd") != std::string::npos);

  // malformed record file
  std::ofstream bad(dir.path() / "bad.jsonl");
  bad << "{not json}\n";
  bad.close();
  CHECK_THROWS_AS(read_records(dir.path() / "bad.jsonl"), DataError);
}
