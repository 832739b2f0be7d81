#pragma once

#include "czsl/dataset.hpp"

namespace czsl {

struct EpisodeConfig {
  int64_t n_primitives = 5;       // primitives per kind
  int64_t support_per_class = 5;  // labeled samples per seen composition
  int64_t query_per_class = 5;    // query samples per query class
  int64_t max_attempts = 10000;

  void validate() const;
};

/// One sampled mini-environment. The prediction space is the full
/// n_primitives x n_primitives grid over (p1, p2), in row-major order; seen
/// and unseen compositions are the subset of grid cells that exist in the
/// dataset.
struct Episode {
  std::vector<int32_t> p1;  // TYPE1 primitive ids, episode order
  std::vector<int32_t> p2;  // TYPE2 primitive ids, episode order
  std::vector<Composition> seen;
  std::vector<Composition> unseen;
  std::vector<std::pair<int64_t, Composition>> support;  // (sample id, label)
  std::vector<std::pair<int64_t, Composition>> query;
  int64_t support_per_class = 0;
  int64_t query_per_class = 0;

  int64_t n_seen() const { return static_cast<int64_t>(seen.size()); }
  int64_t n_query_classes() const { return static_cast<int64_t>(seen.size() + unseen.size()); }
  int64_t grid_size() const { return static_cast<int64_t>(p1.size() * p2.size()); }

  /// Row-major grid index of a composition; throws DataError when either
  /// primitive is outside the episode.
  int64_t grid_index(Composition c) const;
  Composition grid_composition(int64_t index) const;
  bool is_seen(Composition c) const;
  bool is_unseen(Composition c) const;
};

/// Open-world episode sampling. Step 1 draws n_primitives seed compositions
/// with disjoint primitives; step 2 enumerates the remaining grid cells that
/// exist in the dataset (at least 2 required, else the attempt restarts),
/// force-assigns the first two candidates one to seen and one to unseen, and
/// assigns the rest by fair coin; step 3 draws disjoint support and query
/// samples. Throws SamplerExhausted after cfg.max_attempts failed attempts.
Episode sample_episode(const Dataset& ds, Split split, const EpisodeConfig& cfg,
                       rng::Engine& eng);

/// Names every violated episode invariant; empty means the episode is sound.
std::vector<std::string> validate_episode(const Episode& e, const Dataset& ds);

/// Text round-trip for replay. Serialized episodes reference primitive names
/// and sample ids; loading resolves them against the dataset.
std::string episode_to_text(const Episode& e, const Dataset& ds);
Episode episode_from_text(const std::string& text, const Dataset& ds);

}  // namespace czsl
