#include "czsl/param_tree.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "czsl/errors.hpp"

namespace czsl {

namespace {

constexpr char kMagic[8] = {'C', 'Z', 'P', 'T', '0', '0', '0', '1'};

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void ParamTree::set(const std::string& name, Tensor t) {
  if (name.empty()) throw DataError("param tree: empty leaf name");
  leaves_[name] = std::move(t);
}

const Tensor& ParamTree::at(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw DataError("param tree: unknown leaf '" + name + "'");
  return it->second;
}

Tensor& ParamTree::at(const std::string& name) {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw DataError("param tree: unknown leaf '" + name + "'");
  return it->second;
}

int64_t ParamTree::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : leaves_) n += t.size();
  return n;
}

std::vector<std::string> ParamTree::names() const {
  std::vector<std::string> out;
  out.reserve(leaves_.size());
  for (const auto& [name, t] : leaves_) out.push_back(name);
  return out;
}

bool ParamTree::same_structure(const ParamTree& other) const {
  if (leaves_.size() != other.leaves_.size()) return false;
  auto a = leaves_.begin();
  auto b = other.leaves_.begin();
  for (; a != leaves_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
  }
  return true;
}

ParamTree& ParamTree::add_scaled(const ParamTree& other, double a) {
  if (!same_structure(other)) throw ShapeError("param tree add_scaled: structure mismatch");
  auto it = other.leaves_.begin();
  for (auto& [name, t] : leaves_) {
    t.add_scaled(it->second, a);
    ++it;
  }
  return *this;
}

ParamTree& ParamTree::scale(double a) {
  for (auto& [name, t] : leaves_) t.scale(a);
  return *this;
}

ParamTree ParamTree::zeros_like(const ParamTree& other) {
  ParamTree out;
  for (const auto& [name, t] : other.leaves_) out.set(name, Tensor::zeros(t.shape()));
  return out;
}

double ParamTree::squared_l2_norm() const {
  double acc = 0.0;
  for (const auto& [name, t] : leaves_) {
    for (int64_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
  }
  return acc;
}

bool ParamTree::all_finite() const {
  for (const auto& [name, t] : leaves_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

void ParamTree::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint64_t>(out, leaves_.size());
  for (const auto& [name, t] : leaves_) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) write_pod<int64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint: write failed for '" + path.string() + "'");
}

ParamTree ParamTree::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic in '" + path.string() + "'");
  }
  ParamTree tree;
  uint64_t count = read_pod<uint64_t>(in);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t name_len = read_pod<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    uint32_t rank = read_pod<uint32_t>(in);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = read_pod<int64_t>(in);
    std::vector<double> data(static_cast<size_t>(shape_size(shape)));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated tensor data in '" + path.string() + "'");
    tree.set(name, Tensor::from(std::move(shape), std::move(data)));
  }
  return tree;
}

}  // namespace czsl
