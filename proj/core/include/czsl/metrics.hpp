#pragma once

#include <filesystem>

#include "czsl/episode.hpp"

namespace czsl {

enum class PredictionClass : uint8_t { kSeen, kUnseen, kUnfeasible };

struct QueryOutcome {
  Composition truth;
  Composition predicted;
  bool truth_unseen = false;                                   // partition of the true label
  PredictionClass predicted_class = PredictionClass::kSeen;    // partition of the prediction
};

struct EpisodeResult {
  std::vector<QueryOutcome> outcomes;
};

/// Pairs episode query labels with model predictions (one per query sample,
/// in query order).
EpisodeResult make_result(const Episode& episode, const std::vector<Composition>& predictions);

/// (seen accuracy, unseen accuracy) as fractions. Throws NumericError when a
/// partition is empty.
std::pair<double, double> episode_accuracy(const EpisodeResult& result);

/// 2*sa*ua / (sa + ua), with the 0/0 limit defined as 0.
double harmonic_mean(double sa, double ua);

struct ErrorRatio {
  bool defined = false;
  double value = 0.0;
  int64_t unseen_to_seen = 0;
  int64_t unseen_to_wrong_unseen = 0;
  int64_t unseen_to_unfeasible = 0;  // tracked separately, outside the ratio
};

/// Among wrong predictions on unseen-composition queries, confusions toward
/// seen cells over confusions toward wrong unseen cells. Undefined when the
/// denominator is zero (counts still reported).
ErrorRatio error_ratio(const std::vector<EpisodeResult>& results);

struct MetricsReport {
  double ua = 0.0;  // percent
  double sa = 0.0;
  double hm = 0.0;  // from the aggregated ua/sa
  double ua_ci95 = 0.0;
  double sa_ci95 = 0.0;
  double hm_ci95 = 0.0;  // spread of per-episode harmonic means, informational
  int64_t n_episodes = 0;
  ErrorRatio errors;
};

/// Mean accuracies over episodes, 95% confidence half-widths, harmonic mean
/// of the aggregates. Needs at least 2 episodes.
MetricsReport aggregate(const std::vector<EpisodeResult>& results);

/// One line-delimited record per (method, configuration, seed).
struct ResultRecord {
  std::string method;
  std::string dataset;
  int64_t n_primitives = 0;
  int64_t support_per_class = 0;
  int64_t query_per_class = 0;
  uint64_t seed = 0;
  MetricsReport metrics;
};

void write_records(const std::vector<ResultRecord>& records, const std::filesystem::path& path,
                   bool append);
std::vector<ResultRecord> read_records(const std::filesystem::path& path);

/// Aligned comparison table, one row per (method, support size, seed), plus
/// seed-mean rows when a group has several seeds.
std::string render_table(const std::vector<ResultRecord>& records);

}  // namespace czsl
