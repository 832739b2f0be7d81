#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "czsl/rng.hpp"
#include "czsl/tensor.hpp"

namespace czsl {

enum class PrimitiveKind : uint8_t { kType1, kType2 };
enum class Split : uint8_t { kTrain, kVal, kTest };

std::string to_string(PrimitiveKind kind);
std::string to_string(Split split);
PrimitiveKind parse_kind(const std::string& s);
Split parse_split(const std::string& s);

/// An atomic visual concept. Two kinds per dataset: TYPE1 (color-like /
/// attribute-like) and TYPE2 (shape-like / object-like).
struct Primitive {
  int32_t id = -1;
  std::string name;
  PrimitiveKind kind = PrimitiveKind::kType1;
  Split split = Split::kTrain;
};

/// Ordered pair of primitive ids: first of TYPE1, second of TYPE2.
struct Composition {
  int32_t p1 = -1;
  int32_t p2 = -1;
  friend auto operator<=>(const Composition&, const Composition&) = default;
};

struct Sample {
  int64_t id = -1;
  Tensor image;  // [channels, H, W], values in [0,1]
  Composition label;
};

/// Immutable-after-build collection of primitives, compositions and labeled
/// samples, with a split assigned per composition via its primitives.
class Dataset {
public:
  int32_t add_primitive(const std::string& name, PrimitiveKind kind, Split split);
  void add_composition(Composition c);
  void add_sample(int64_t id, Tensor image, Composition label);
  void set_explicit_embedding(int32_t primitive_id, std::vector<double> v);

  const std::vector<Primitive>& primitives() const { return primitives_; }
  const Primitive& primitive(int32_t id) const;
  std::optional<int32_t> find_primitive(const std::string& name, PrimitiveKind kind) const;

  const std::vector<Composition>& compositions() const { return compositions_; }
  std::vector<Composition> compositions_in(Split split) const;
  bool has_composition(Composition c) const;
  Split composition_split(Composition c) const;
  std::string composition_str(Composition c) const;

  const std::vector<int64_t>& samples_of(Composition c) const;
  const Sample& sample(int64_t id) const;
  bool has_sample(int64_t id) const;
  int64_t sample_count() const { return static_cast<int64_t>(samples_.size()); }
  const std::vector<Sample>& samples() const { return samples_; }

  const std::optional<std::vector<double>>& explicit_embedding(int32_t primitive_id) const;

  /// All invariant violations, human-readable; empty when the dataset is
  /// sound. validate() throws DataError on the first violation instead.
  std::vector<std::string> violations() const;
  void validate() const;

  /// Merges `other` into this dataset (disjoint primitive names per kind,
  /// disjoint sample ids required).
  void merge(const Dataset& other);

private:
  std::vector<Primitive> primitives_;
  std::map<std::pair<std::string, int>, int32_t> primitive_index_;
  std::vector<Composition> compositions_;
  std::map<Composition, int32_t> composition_index_;
  std::vector<Sample> samples_;
  std::map<int64_t, int64_t> sample_index_;
  std::map<Composition, std::vector<int64_t>> samples_by_composition_;
  std::map<int32_t, std::optional<std::vector<double>>> explicit_embeddings_;
};

/// Deterministic primitive -> unit vector map. Synthetic vectors are seeded
/// from (name, kind, seed); a dataset may carry explicit vectors instead,
/// which are L2-normalized on the way out.
class EmbeddingProvider {
public:
  EmbeddingProvider(int64_t dim, uint64_t seed) : dim_(dim), seed_(seed) {}

  int64_t dim() const { return dim_; }
  uint64_t seed() const { return seed_; }

  /// Synthetic unit vector for a (name, kind) pair.
  Tensor unit_vector(const std::string& name, PrimitiveKind kind) const;

private:
  int64_t dim_;
  uint64_t seed_;
};

/// Embedding for a registered primitive; honors the dataset's explicit
/// vectors when present. Throws DataError for unknown primitives.
Tensor embedding_for(const Dataset& ds, int32_t primitive_id, const EmbeddingProvider& provider);

}  // namespace czsl
