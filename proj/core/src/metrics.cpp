#include "czsl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "czsl/errors.hpp"

namespace czsl {

EpisodeResult make_result(const Episode& episode, const std::vector<Composition>& predictions) {
  if (predictions.size() != episode.query.size()) {
    throw NumericError("make_result: " + std::to_string(predictions.size()) +
                       " predictions for " + std::to_string(episode.query.size()) +
                       " query samples");
  }
  EpisodeResult result;
  result.outcomes.reserve(predictions.size());
  for (size_t i = 0; i < predictions.size(); ++i) {
    QueryOutcome o;
    o.truth = episode.query[i].second;
    o.predicted = predictions[i];
    o.truth_unseen = episode.is_unseen(o.truth);
    if (episode.is_seen(o.predicted)) {
      o.predicted_class = PredictionClass::kSeen;
    } else if (episode.is_unseen(o.predicted)) {
      o.predicted_class = PredictionClass::kUnseen;
    } else {
      o.predicted_class = PredictionClass::kUnfeasible;
    }
    result.outcomes.push_back(o);
  }
  return result;
}

std::pair<double, double> episode_accuracy(const EpisodeResult& result) {
  int64_t seen_total = 0, seen_correct = 0, unseen_total = 0, unseen_correct = 0;
  for (const QueryOutcome& o : result.outcomes) {
    if (o.truth_unseen) {
      ++unseen_total;
      if (o.predicted == o.truth) ++unseen_correct;
    } else {
      ++seen_total;
      if (o.predicted == o.truth) ++seen_correct;
    }
  }
  if (seen_total == 0 || unseen_total == 0) {
    throw NumericError("episode_accuracy: empty seen or unseen partition");
  }
  return {static_cast<double>(seen_correct) / static_cast<double>(seen_total),
          static_cast<double>(unseen_correct) / static_cast<double>(unseen_total)};
}

double harmonic_mean(double sa, double ua) {
  if (sa < 0.0 || ua < 0.0) throw NumericError("harmonic_mean: negative accuracy");
  double denom = sa + ua;
  if (denom == 0.0) return 0.0;
  return 2.0 * sa * ua / denom;
}

ErrorRatio error_ratio(const std::vector<EpisodeResult>& results) {
  ErrorRatio er;
  for (const EpisodeResult& r : results) {
    for (const QueryOutcome& o : r.outcomes) {
      if (!o.truth_unseen || o.predicted == o.truth) continue;
      switch (o.predicted_class) {
        case PredictionClass::kSeen: ++er.unseen_to_seen; break;
        case PredictionClass::kUnseen: ++er.unseen_to_wrong_unseen; break;
        case PredictionClass::kUnfeasible: ++er.unseen_to_unfeasible; break;
      }
    }
  }
  if (er.unseen_to_wrong_unseen > 0) {
    er.defined = true;
    er.value = static_cast<double>(er.unseen_to_seen) /
               static_cast<double>(er.unseen_to_wrong_unseen);
  }
  return er;
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double ci95 = 0.0;
};

MeanStd mean_ci(const std::vector<double>& xs) {
  double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var = xs.size() > 1 ? var / (n - 1.0) : 0.0;
  return {mean, 1.96 * std::sqrt(var / n)};
}

}  // namespace

MetricsReport aggregate(const std::vector<EpisodeResult>& results) {
  if (results.size() < 2) throw NumericError("aggregate: need at least 2 episodes");
  std::vector<double> sa, ua, hm;
  sa.reserve(results.size());
  ua.reserve(results.size());
  hm.reserve(results.size());
  for (const EpisodeResult& r : results) {
    auto [s, u] = episode_accuracy(r);
    sa.push_back(100.0 * s);
    ua.push_back(100.0 * u);
    hm.push_back(harmonic_mean(100.0 * s, 100.0 * u));
  }
  MetricsReport report;
  MeanStd ms = mean_ci(sa);
  report.sa = ms.mean;
  report.sa_ci95 = ms.ci95;
  ms = mean_ci(ua);
  report.ua = ms.mean;
  report.ua_ci95 = ms.ci95;
  ms = mean_ci(hm);
  report.hm_ci95 = ms.ci95;
  report.hm = harmonic_mean(report.sa, report.ua);
  report.n_episodes = static_cast<int64_t>(results.size());
  report.errors = error_ratio(results);
  return report;
}

namespace {

nlohmann::ordered_json to_json(const ResultRecord& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["dataset"] = r.dataset;
  j["n_primitives"] = r.n_primitives;
  j["support_per_class"] = r.support_per_class;
  j["query_per_class"] = r.query_per_class;
  j["seed"] = r.seed;
  j["n_episodes"] = r.metrics.n_episodes;
  j["ua"] = r.metrics.ua;
  j["sa"] = r.metrics.sa;
  j["hm"] = r.metrics.hm;
  j["ua_ci95"] = r.metrics.ua_ci95;
  j["sa_ci95"] = r.metrics.sa_ci95;
  j["hm_ci95"] = r.metrics.hm_ci95;
  j["error_ratio_defined"] = r.metrics.errors.defined;
  j["error_ratio"] = r.metrics.errors.value;
  j["unseen_to_seen"] = r.metrics.errors.unseen_to_seen;
  j["unseen_to_wrong_unseen"] = r.metrics.errors.unseen_to_wrong_unseen;
  j["unseen_to_unfeasible"] = r.metrics.errors.unseen_to_unfeasible;
  return j;
}

ResultRecord from_json(const nlohmann::json& j) {
  ResultRecord r;
  r.method = j.at("method").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.n_primitives = j.at("n_primitives").get<int64_t>();
  r.support_per_class = j.at("support_per_class").get<int64_t>();
  r.query_per_class = j.at("query_per_class").get<int64_t>();
  r.seed = j.at("seed").get<uint64_t>();
  r.metrics.n_episodes = j.at("n_episodes").get<int64_t>();
  r.metrics.ua = j.at("ua").get<double>();
  r.metrics.sa = j.at("sa").get<double>();
  r.metrics.hm = j.at("hm").get<double>();
  r.metrics.ua_ci95 = j.at("ua_ci95").get<double>();
  r.metrics.sa_ci95 = j.at("sa_ci95").get<double>();
  r.metrics.hm_ci95 = j.at("hm_ci95").get<double>();
  r.metrics.errors.defined = j.at("error_ratio_defined").get<bool>();
  r.metrics.errors.value = j.at("error_ratio").get<double>();
  r.metrics.errors.unseen_to_seen = j.at("unseen_to_seen").get<int64_t>();
  r.metrics.errors.unseen_to_wrong_unseen = j.at("unseen_to_wrong_unseen").get<int64_t>();
  r.metrics.errors.unseen_to_unfeasible = j.at("unseen_to_unfeasible").get<int64_t>();
  return r;
}

std::string fmt(double v, int precision = 2) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << v;
  return out.str();
}

}  // namespace

void write_records(const std::vector<ResultRecord>& records, const std::filesystem::path& path,
                   bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DataError("records: cannot open '" + path.string() + "' for writing");
  for (const ResultRecord& r : records) out << to_json(r).dump() << "\n";
  if (!out) throw DataError("records: write failed for '" + path.string() + "'");
}

std::vector<ResultRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("records: cannot open '" + path.string() + "'");
  std::vector<ResultRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw DataError("records " + path.string() + ":" + std::to_string(line_no) +
                      ": malformed record: " + e.what());
    }
  }
  return out;
}

std::string render_table(const std::vector<ResultRecord>& records) {
  if (records.empty()) throw DataError("render_table: no records");
  std::ostringstream out;
  out << std::left << std::setw(14) << "method" << std::setw(8) << "K_s" << std::setw(8) << "seed"
      << std::setw(18) << "UA" << std::setw(18) << "SA" << std::setw(18) << "HM" << std::setw(12)
      << "U>S/U>U"
      << "episodes\n";
  out << std::string(96, '-') << "\n";

  auto emit = [&](const std::string& method, const std::string& ks, const std::string& seed,
                  const MetricsReport& m) {
    std::string ratio = m.errors.defined ? fmt(m.errors.value)
                                         : "undef(" + std::to_string(m.errors.unseen_to_seen) + ")";
    out << std::left << std::setw(14) << method << std::setw(8) << ks << std::setw(8) << seed
        << std::setw(18) << (fmt(m.ua) + " +-" + fmt(m.ua_ci95)) << std::setw(18)
        << (fmt(m.sa) + " +-" + fmt(m.sa_ci95)) << std::setw(18)
        << (fmt(m.hm) + " +-" + fmt(m.hm_ci95)) << std::setw(12) << ratio << m.n_episodes << "\n";
  };

  std::map<std::pair<std::string, int64_t>, std::vector<const ResultRecord*>> groups;
  for (const ResultRecord& r : records) {
    groups[{r.method, r.support_per_class}].push_back(&r);
    emit(r.method, std::to_string(r.support_per_class), std::to_string(r.seed), r.metrics);
  }
  for (const auto& [key, group] : groups) {
    if (group.size() < 2) continue;
    // Seed-level mean +- std over the per-seed aggregates.
    std::vector<double> ua, sa, hm;
    MetricsReport mean;
    for (const ResultRecord* r : group) {
      ua.push_back(r->metrics.ua);
      sa.push_back(r->metrics.sa);
      hm.push_back(r->metrics.hm);
      mean.n_episodes += r->metrics.n_episodes;
    }
    auto stats = [](const std::vector<double>& xs) {
      double m = 0.0;
      for (double x : xs) m += x;
      m /= static_cast<double>(xs.size());
      double v = 0.0;
      for (double x : xs) v += (x - m) * (x - m);
      return std::make_pair(m, std::sqrt(v / static_cast<double>(xs.size() - 1)));
    };
    auto [ua_m, ua_s] = stats(ua);
    auto [sa_m, sa_s] = stats(sa);
    auto [hm_m, hm_s] = stats(hm);
    (void)hm_m;
    mean.ua = ua_m;
    mean.ua_ci95 = ua_s;
    mean.sa = sa_m;
    mean.sa_ci95 = sa_s;
    mean.hm = harmonic_mean(sa_m, ua_m);  // HM column always recomputes from the row
    mean.hm_ci95 = hm_s;
    mean.errors = error_ratio({});
    emit(key.first, std::to_string(key.second), "mean+-sd", mean);
  }
  return out.str();
}

}  // namespace czsl
