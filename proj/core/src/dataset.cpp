#include "czsl/dataset.hpp"

#include <cmath>

#include "czsl/errors.hpp"

namespace czsl {

std::string to_string(PrimitiveKind kind) {
  return kind == PrimitiveKind::kType1 ? "TYPE1" : "TYPE2";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "TRAIN";
    case Split::kVal: return "VAL";
    case Split::kTest: return "TEST";
  }
  return "?";
}

PrimitiveKind parse_kind(const std::string& s) {
  if (s == "TYPE1") return PrimitiveKind::kType1;
  if (s == "TYPE2") return PrimitiveKind::kType2;
  throw DataError("unknown primitive kind '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "TRAIN") return Split::kTrain;
  if (s == "VAL") return Split::kVal;
  if (s == "TEST") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

int32_t Dataset::add_primitive(const std::string& name, PrimitiveKind kind, Split split) {
  if (name.empty()) throw DataError("primitive: empty name");
  auto key = std::make_pair(name, static_cast<int>(kind));
  if (primitive_index_.count(key)) {
    throw DataError("primitive '" + name + "' of kind " + to_string(kind) + " already declared");
  }
  int32_t id = static_cast<int32_t>(primitives_.size());
  primitives_.push_back({id, name, kind, split});
  primitive_index_[key] = id;
  return id;
}

const Primitive& Dataset::primitive(int32_t id) const {
  if (id < 0 || id >= static_cast<int32_t>(primitives_.size())) {
    throw DataError("primitive id " + std::to_string(id) + " out of range");
  }
  return primitives_[static_cast<size_t>(id)];
}

std::optional<int32_t> Dataset::find_primitive(const std::string& name, PrimitiveKind kind) const {
  auto it = primitive_index_.find({name, static_cast<int>(kind)});
  if (it == primitive_index_.end()) return std::nullopt;
  return it->second;
}

void Dataset::add_composition(Composition c) {
  const Primitive& a = primitive(c.p1);
  const Primitive& b = primitive(c.p2);
  if (a.kind != PrimitiveKind::kType1 || b.kind != PrimitiveKind::kType2) {
    throw DataError("composition (" + a.name + ", " + b.name + "): kinds must be (TYPE1, TYPE2)");
  }
  if (a.split != b.split) {
    throw DataError("composition (" + a.name + ", " + b.name + "): primitives from different splits");
  }
  if (composition_index_.count(c)) {
    throw DataError("composition " + composition_str(c) + " already declared");
  }
  composition_index_[c] = static_cast<int32_t>(compositions_.size());
  compositions_.push_back(c);
}

void Dataset::add_sample(int64_t id, Tensor image, Composition label) {
  if (!composition_index_.count(label)) {
    throw DataError("sample " + std::to_string(id) + ": label " + composition_str(label) +
                    " is not a declared composition");
  }
  if (sample_index_.count(id)) {
    throw DataError("sample id " + std::to_string(id) + " already present");
  }
  sample_index_[id] = static_cast<int64_t>(samples_.size());
  samples_.push_back({id, std::move(image), label});
  samples_by_composition_[label].push_back(id);
}

void Dataset::set_explicit_embedding(int32_t primitive_id, std::vector<double> v) {
  primitive(primitive_id);
  explicit_embeddings_[primitive_id] = std::move(v);
}

std::vector<Composition> Dataset::compositions_in(Split split) const {
  std::vector<Composition> out;
  for (const Composition& c : compositions_) {
    if (composition_split(c) == split) out.push_back(c);
  }
  return out;
}

bool Dataset::has_composition(Composition c) const { return composition_index_.count(c) > 0; }

Split Dataset::composition_split(Composition c) const { return primitive(c.p1).split; }

std::string Dataset::composition_str(Composition c) const {
  std::string a = c.p1 >= 0 && c.p1 < static_cast<int32_t>(primitives_.size())
                      ? primitive(c.p1).name
                      : "#" + std::to_string(c.p1);
  std::string b = c.p2 >= 0 && c.p2 < static_cast<int32_t>(primitives_.size())
                      ? primitive(c.p2).name
                      : "#" + std::to_string(c.p2);
  return "(" + a + ", " + b + ")";
}

const std::vector<int64_t>& Dataset::samples_of(Composition c) const {
  static const std::vector<int64_t> kEmpty;
  auto it = samples_by_composition_.find(c);
  return it == samples_by_composition_.end() ? kEmpty : it->second;
}

const Sample& Dataset::sample(int64_t id) const {
  auto it = sample_index_.find(id);
  if (it == sample_index_.end()) throw DataError("unknown sample id " + std::to_string(id));
  return samples_[static_cast<size_t>(it->second)];
}

bool Dataset::has_sample(int64_t id) const { return sample_index_.count(id) > 0; }

const std::optional<std::vector<double>>& Dataset::explicit_embedding(int32_t primitive_id) const {
  static const std::optional<std::vector<double>> kNone;
  auto it = explicit_embeddings_.find(primitive_id);
  return it == explicit_embeddings_.end() ? kNone : it->second;
}

std::vector<std::string> Dataset::violations() const {
  std::vector<std::string> out;
  // Primitive name sets must be disjoint across splits per kind. Names are
  // unique per (name, kind) by construction, so this holds automatically;
  // merged datasets are checked at merge time. What can still go wrong is a
  // composition pairing primitives across splits, which add_composition
  // rejects. Remaining checks are sample-count based.
  for (const Composition& c : compositions_) {
    int64_t n = static_cast<int64_t>(samples_of(c).size());
    if (n < 10) {
      out.push_back("composition " + composition_str(c) + " has " + std::to_string(n) +
                    " samples, need at least 10");
    }
  }
  for (const Sample& s : samples_) {
    if (s.image.rank() != 3) {
      out.push_back("sample " + std::to_string(s.id) + ": image must be rank-3, got " +
                    shape_str(s.image.shape()));
      continue;
    }
    for (int64_t i = 0; i < s.image.size(); ++i) {
      double v = s.image[i];
      if (!(v >= 0.0 && v <= 1.0)) {
        out.push_back("sample " + std::to_string(s.id) + ": pixel value " + std::to_string(v) +
                      " outside [0,1]");
        break;
      }
    }
  }
  return out;
}

void Dataset::validate() const {
  std::vector<std::string> v = violations();
  if (!v.empty()) throw DataError("dataset invariant violated: " + v.front());
}

void Dataset::merge(const Dataset& other) {
  // Primitives must not collide per (name, kind), regardless of split.
  for (const Primitive& p : other.primitives_) {
    if (find_primitive(p.name, p.kind)) {
      throw DataError("merge: primitive '" + p.name + "' (" + to_string(p.kind) +
                      ") present in more than one part");
    }
  }
  std::vector<int32_t> id_map(other.primitives_.size());
  for (const Primitive& p : other.primitives_) {
    id_map[static_cast<size_t>(p.id)] = add_primitive(p.name, p.kind, p.split);
  }
  for (const Composition& c : other.compositions_) {
    add_composition({id_map[static_cast<size_t>(c.p1)], id_map[static_cast<size_t>(c.p2)]});
  }
  for (const Sample& s : other.samples_) {
    add_sample(s.id, s.image,
               {id_map[static_cast<size_t>(s.label.p1)], id_map[static_cast<size_t>(s.label.p2)]});
  }
  for (const auto& [pid, vec] : other.explicit_embeddings_) {
    if (vec) explicit_embeddings_[id_map[static_cast<size_t>(pid)]] = vec;
  }
}

Tensor EmbeddingProvider::unit_vector(const std::string& name, PrimitiveKind kind) const {
  uint64_t s = rng::derive_seed(seed_, "embedding");
  s = rng::derive_seed(s, to_string(kind) + ":" + name);
  rng::Engine eng = rng::make_engine(s);
  Tensor v = Tensor::zeros({dim_});
  double norm_sq = 0.0;
  for (int64_t i = 0; i < dim_; ++i) {
    v[i] = rng::normal(eng);
    norm_sq += v[i] * v[i];
  }
  double norm = std::sqrt(norm_sq);
  if (norm == 0.0) {
    v[0] = 1.0;  // astronomically unlikely; keep the unit-norm contract
    return v;
  }
  v.scale(1.0 / norm);
  return v;
}

Tensor embedding_for(const Dataset& ds, int32_t primitive_id, const EmbeddingProvider& provider) {
  const Primitive& p = ds.primitive(primitive_id);
  const auto& explicit_vec = ds.explicit_embedding(primitive_id);
  if (explicit_vec) {
    if (static_cast<int64_t>(explicit_vec->size()) != provider.dim()) {
      throw DataError("primitive '" + p.name + "': explicit embedding has dimension " +
                      std::to_string(explicit_vec->size()) + ", provider expects " +
                      std::to_string(provider.dim()));
    }
    Tensor v = Tensor::vector(*explicit_vec);
    double norm = 0.0;
    for (int64_t i = 0; i < v.size(); ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    if (norm == 0.0) throw DataError("primitive '" + p.name + "': explicit embedding is zero");
    v.scale(1.0 / norm);
    return v;
  }
  return provider.unit_vector(p.name, p.kind);
}

}  // namespace czsl
