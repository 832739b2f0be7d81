#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

#include "czsl/rng.hpp"
#include "czsl/tensor.hpp"

namespace czsl::test {

inline Tensor random_tensor(Shape shape, rng::Engine& eng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng::uniform(eng, lo, hi);
  return t;
}

inline Tensor random_normal_tensor(Shape shape, rng::Engine& eng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng::normal(eng);
  return t;
}

/// Unique scratch directory under the build tree.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("czsl_test_" + tag + "_" + std::to_string(counter++) + "_" +
             std::to_string(::getpid()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

}  // namespace czsl::test
