#include "czsl/episode.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "czsl/errors.hpp"

namespace czsl {

void EpisodeConfig::validate() const {
  if (n_primitives < 1 || support_per_class < 1 || query_per_class < 1 || max_attempts < 1) {
    throw ConfigError("episode config: all fields must be >= 1");
  }
}

int64_t Episode::grid_index(Composition c) const {
  auto i1 = std::find(p1.begin(), p1.end(), c.p1);
  auto i2 = std::find(p2.begin(), p2.end(), c.p2);
  if (i1 == p1.end() || i2 == p2.end()) {
    throw DataError("episode: composition primitives are outside this episode");
  }
  return (i1 - p1.begin()) * static_cast<int64_t>(p2.size()) + (i2 - p2.begin());
}

Composition Episode::grid_composition(int64_t index) const {
  int64_t n2 = static_cast<int64_t>(p2.size());
  if (index < 0 || index >= grid_size()) throw DataError("episode: grid index out of range");
  return {p1[static_cast<size_t>(index / n2)], p2[static_cast<size_t>(index % n2)]};
}

bool Episode::is_seen(Composition c) const {
  return std::find(seen.begin(), seen.end(), c) != seen.end();
}

bool Episode::is_unseen(Composition c) const {
  return std::find(unseen.begin(), unseen.end(), c) != unseen.end();
}

Episode sample_episode(const Dataset& ds, Split split, const EpisodeConfig& cfg,
                       rng::Engine& eng) {
  cfg.validate();
  std::vector<Composition> pool = ds.compositions_in(split);
  if (pool.empty()) throw DataError("sample_episode: split " + to_string(split) + " is empty");
  int64_t min_samples = cfg.support_per_class + cfg.query_per_class;
  for (const Composition& c : pool) {
    if (static_cast<int64_t>(ds.samples_of(c).size()) < min_samples) {
      throw DataError("sample_episode: composition " + ds.composition_str(c) + " has " +
                      std::to_string(ds.samples_of(c).size()) + " samples, episode sizes need " +
                      std::to_string(min_samples));
    }
  }

  const int64_t np = cfg.n_primitives;
  const int64_t step1_draw_limit = std::max<int64_t>(1000, 40 * np);

  for (int64_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    // Step 1: seed compositions with pairwise-disjoint primitives.
    Episode ep;
    ep.support_per_class = cfg.support_per_class;
    ep.query_per_class = cfg.query_per_class;
    std::set<int32_t> used1, used2;
    int64_t draws = 0;
    while (static_cast<int64_t>(ep.seen.size()) < np && draws < step1_draw_limit) {
      ++draws;
      const Composition& c = pool[static_cast<size_t>(
          rng::uniform_int(eng, 0, static_cast<int64_t>(pool.size()) - 1))];
      if (used1.count(c.p1) || used2.count(c.p2)) continue;
      used1.insert(c.p1);
      used2.insert(c.p2);
      ep.p1.push_back(c.p1);
      ep.p2.push_back(c.p2);
      ep.seen.push_back(c);
    }
    if (static_cast<int64_t>(ep.seen.size()) < np) continue;

    // Step 2: enumerate candidate grid cells that exist in the dataset.
    std::vector<Composition> candidates;
    for (int32_t a : ep.p1) {
      for (int32_t b : ep.p2) {
        Composition c{a, b};
        if (ds.has_composition(c) && !ep.is_seen(c)) candidates.push_back(c);
      }
    }
    if (static_cast<int64_t>(candidates.size()) < 2) continue;  // seen/unseen insufficient

    // First two candidates are forced, one to each side; the coin decides
    // which. Remaining candidates get independent fair coins. The size
    // constraints (at least np+1 seen, at least 1 unseen) hold by
    // construction; the redraw loop guards them anyway.
    bool assigned = false;
    for (int64_t redraw = 0; redraw < cfg.max_attempts && !assigned; ++redraw) {
      std::vector<Composition> seen_extra, unseen_set;
      if (rng::uniform_int(eng, 0, 1) == 0) {
        seen_extra.push_back(candidates[0]);
        unseen_set.push_back(candidates[1]);
      } else {
        seen_extra.push_back(candidates[1]);
        unseen_set.push_back(candidates[0]);
      }
      for (size_t i = 2; i < candidates.size(); ++i) {
        if (rng::uniform_int(eng, 0, 1) == 0) {
          seen_extra.push_back(candidates[i]);
        } else {
          unseen_set.push_back(candidates[i]);
        }
      }
      int64_t n_seen = np + static_cast<int64_t>(seen_extra.size());
      int64_t n_query = np + static_cast<int64_t>(candidates.size());
      if (n_seen < np + 1 || n_seen > n_query - 1) continue;
      ep.seen.insert(ep.seen.end(), seen_extra.begin(), seen_extra.end());
      ep.unseen = std::move(unseen_set);
      assigned = true;
    }
    if (!assigned) continue;

    // Step 3: disjoint support and query samples.
    for (const Composition& c : ep.seen) {
      const std::vector<int64_t>& ids = ds.samples_of(c);
      std::vector<int64_t> picks = rng::sample_indices(
          static_cast<int64_t>(ids.size()), cfg.support_per_class + cfg.query_per_class, eng);
      for (int64_t k = 0; k < cfg.support_per_class; ++k) {
        ep.support.emplace_back(ids[static_cast<size_t>(picks[static_cast<size_t>(k)])], c);
      }
      for (int64_t k = cfg.support_per_class; k < cfg.support_per_class + cfg.query_per_class; ++k) {
        ep.query.emplace_back(ids[static_cast<size_t>(picks[static_cast<size_t>(k)])], c);
      }
    }
    for (const Composition& c : ep.unseen) {
      const std::vector<int64_t>& ids = ds.samples_of(c);
      std::vector<int64_t> picks =
          rng::sample_indices(static_cast<int64_t>(ids.size()), cfg.query_per_class, eng);
      for (int64_t k : picks) ep.query.emplace_back(ids[static_cast<size_t>(k)], c);
    }
    return ep;
  }
  throw SamplerExhausted("sample_episode: no valid episode after " +
                         std::to_string(cfg.max_attempts) + " attempts on split " +
                         to_string(split) + " (check primitive counts and composition coverage)");
}

std::vector<std::string> validate_episode(const Episode& e, const Dataset& ds) {
  std::vector<std::string> out;
  const int64_t np = static_cast<int64_t>(e.p1.size());

  // 1. primitive sets sized equally, no duplicates
  std::set<int32_t> s1(e.p1.begin(), e.p1.end());
  std::set<int32_t> s2(e.p2.begin(), e.p2.end());
  if (e.p1.size() != e.p2.size()) out.push_back("primitive sets differ in size");
  if (s1.size() != e.p1.size() || s2.size() != e.p2.size()) {
    out.push_back("duplicate primitive within a set");
  }

  // 2. every seen/unseen composition on the grid and present in the dataset
  auto in_grid = [&](Composition c) { return s1.count(c.p1) && s2.count(c.p2); };
  for (const Composition& c : e.seen) {
    if (!in_grid(c)) out.push_back("seen composition outside the episode grid");
    if (!ds.has_composition(c)) out.push_back("seen composition missing from the dataset");
  }
  for (const Composition& c : e.unseen) {
    if (!in_grid(c)) out.push_back("unseen composition outside the episode grid");
    if (!ds.has_composition(c)) out.push_back("unseen composition missing from the dataset");
  }

  // 3. disjoint seen/unseen
  for (const Composition& c : e.unseen) {
    if (e.is_seen(c)) out.push_back("composition in both seen and unseen");
  }

  // 4. at least one unseen composition
  if (e.unseen.empty()) out.push_back("no unseen composition");

  // 5/6. class-count consistency and range
  int64_t n_seen = e.n_seen();
  int64_t n_query = e.n_query_classes();
  if (n_seen < np + 1 || n_seen > n_query - 1) {
    out.push_back("seen class count " + std::to_string(n_seen) + " outside [" +
                  std::to_string(np + 1) + "," + std::to_string(n_query - 1) + "]");
  }

  // 7. support: exactly support_per_class per seen composition, only seen
  std::map<Composition, int64_t> support_counts;
  for (const auto& [id, c] : e.support) {
    support_counts[c]++;
    if (!e.is_seen(c)) out.push_back("support sample labeled with a non-seen composition");
    if (!ds.has_sample(id)) {
      out.push_back("support sample id missing from the dataset");
    } else if (!(ds.sample(id).label == c)) {
      out.push_back("support sample label does not match the dataset");
    }
  }
  for (const Composition& c : e.seen) {
    if (support_counts[c] != e.support_per_class) {
      out.push_back("support count for a seen composition is not " +
                    std::to_string(e.support_per_class));
    }
  }

  // 8. query: exactly query_per_class per composition in seen + unseen
  std::map<Composition, int64_t> query_counts;
  for (const auto& [id, c] : e.query) {
    query_counts[c]++;
    if (!e.is_seen(c) && !e.is_unseen(c)) {
      out.push_back("query sample labeled with a composition outside seen and unseen");
    }
    if (!ds.has_sample(id)) {
      out.push_back("query sample id missing from the dataset");
    } else if (!(ds.sample(id).label == c)) {
      out.push_back("query sample label does not match the dataset");
    }
  }
  for (const Composition& c : e.seen) {
    if (query_counts[c] != e.query_per_class) {
      out.push_back("query count for a seen composition is not " +
                    std::to_string(e.query_per_class));
    }
  }
  for (const Composition& c : e.unseen) {
    if (query_counts[c] != e.query_per_class) {
      out.push_back("query count for an unseen composition is not " +
                    std::to_string(e.query_per_class));
    }
  }

  // 9. support/query sample ids disjoint for seen compositions
  std::set<int64_t> support_ids;
  for (const auto& [id, c] : e.support) support_ids.insert(id);
  for (const auto& [id, c] : e.query) {
    if (e.is_seen(c) && support_ids.count(id)) {
      out.push_back("support/query overlap for a seen composition");
    }
  }
  return out;
}

std::string episode_to_text(const Episode& e, const Dataset& ds) {
  std::ostringstream out;
  out << "episode v1\n";
  out << "sizes " << e.support_per_class << " " << e.query_per_class << "\n";
  out << "p1";
  for (int32_t id : e.p1) out << " " << ds.primitive(id).name;
  out << "\np2";
  for (int32_t id : e.p2) out << " " << ds.primitive(id).name;
  out << "\n";
  auto emit_comps = [&](const char* tag, const std::vector<Composition>& comps) {
    out << tag;
    for (const Composition& c : comps) {
      out << " " << ds.primitive(c.p1).name << "|" << ds.primitive(c.p2).name;
    }
    out << "\n";
  };
  emit_comps("seen", e.seen);
  emit_comps("unseen", e.unseen);
  auto emit_samples = [&](const char* tag, const std::vector<std::pair<int64_t, Composition>>& xs) {
    for (const auto& [id, c] : xs) {
      out << tag << " " << id << " " << ds.primitive(c.p1).name << "|" << ds.primitive(c.p2).name
          << "\n";
    }
  };
  emit_samples("support", e.support);
  emit_samples("query", e.query);
  return out.str();
}

Episode episode_from_text(const std::string& text, const Dataset& ds) {
  std::istringstream in(text);
  std::string line;
  Episode e;
  auto resolve = [&](const std::string& token) -> Composition {
    size_t bar = token.find('|');
    if (bar == std::string::npos) throw DataError("episode text: bad composition '" + token + "'");
    auto a = ds.find_primitive(token.substr(0, bar), PrimitiveKind::kType1);
    auto b = ds.find_primitive(token.substr(bar + 1), PrimitiveKind::kType2);
    if (!a || !b) throw DataError("episode text: unknown primitive in '" + token + "'");
    return {*a, *b};
  };
  if (!std::getline(in, line) || line != "episode v1") {
    throw DataError("episode text: missing header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "sizes") {
      ls >> e.support_per_class >> e.query_per_class;
    } else if (tag == "p1" || tag == "p2") {
      std::string name;
      while (ls >> name) {
        auto kind = tag == "p1" ? PrimitiveKind::kType1 : PrimitiveKind::kType2;
        auto id = ds.find_primitive(name, kind);
        if (!id) throw DataError("episode text: unknown primitive '" + name + "'");
        (tag == "p1" ? e.p1 : e.p2).push_back(*id);
      }
    } else if (tag == "seen" || tag == "unseen") {
      std::string token;
      while (ls >> token) (tag == "seen" ? e.seen : e.unseen).push_back(resolve(token));
    } else if (tag == "support" || tag == "query") {
      int64_t id;
      std::string token;
      if (!(ls >> id >> token)) throw DataError("episode text: bad sample line '" + line + "'");
      (tag == "support" ? e.support : e.query).emplace_back(id, resolve(token));
    } else {
      throw DataError("episode text: unknown tag '" + tag + "'");
    }
  }
  return e;
}

}  // namespace czsl
