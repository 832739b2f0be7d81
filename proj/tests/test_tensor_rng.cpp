#include <doctest.h>

#include "czsl/rng.hpp"
#include "czsl/tensor.hpp"
#include "testutil.hpp"

using namespace czsl;

TEST_CASE("tensor shape and data stay consistent") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.size() == 6);
  CHECK(t.at(1, 2) == 6);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
  CHECK_THROWS_AS(t.item(), ShapeError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
}

TEST_CASE("tensor arithmetic helpers") {
  Tensor a = Tensor::from({3}, {1, 2, 3});
  Tensor b = Tensor::from({3}, {10, 20, 30});
  a.add_scaled(b, 0.5);
  CHECK(a[0] == 6.0);
  CHECK(a[2] == 18.0);
  CHECK(a.sum() == doctest::Approx(36.0));
  CHECK_THROWS_AS(a.add_scaled(Tensor::zeros({4}), 1.0), ShapeError);
}

TEST_CASE("uniform stays in range and is deterministic") {
  rng::Engine a = rng::make_engine(7);
  rng::Engine b = rng::make_engine(7);
  for (int i = 0; i < 1000; ++i) {
    double x = rng::uniform(a);
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(x == rng::uniform(b));
  }
}

TEST_CASE("uniform_int covers the full range without bias artifacts") {
  rng::Engine eng = rng::make_engine(3);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) counts[static_cast<size_t>(rng::uniform_int(eng, 0, 4))]++;
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
  CHECK_THROWS(rng::uniform_int(eng, 3, 2));
}

TEST_CASE("normal moments") {
  rng::Engine eng = rng::make_engine(11);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double x = rng::normal(eng);
    sum += x;
    sq += x * x;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("beta(2,2) matches closed-form moments") {
  rng::Engine eng = rng::make_engine(13);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double x = rng::beta(eng, 2.0, 2.0);
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
    sum += x;
    sq += x * x;
  }
  double mean = sum / n;
  double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));   // a/(a+b)
  CHECK(var == doctest::Approx(0.05).epsilon(0.05));   // ab/((a+b)^2 (a+b+1))
}

TEST_CASE("derive_seed separates streams") {
  CHECK(rng::derive_seed(1, "data") != rng::derive_seed(1, "sampler"));
  CHECK(rng::derive_seed(1, "data") != rng::derive_seed(2, "data"));
  CHECK(rng::derive_seed(1, uint64_t{5}) != rng::derive_seed(1, uint64_t{6}));
  CHECK(rng::derive_seed(1, "data") == rng::derive_seed(1, "data"));
}

TEST_CASE("sample_indices returns distinct indices") {
  rng::Engine eng = rng::make_engine(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int64_t> idx = rng::sample_indices(20, 7, eng);
    CHECK(idx.size() == 7);
    std::set<int64_t> unique(idx.begin(), idx.end());
    CHECK(unique.size() == 7);
    for (int64_t i : idx) {
      CHECK(i >= 0);
      CHECK(i < 20);
    }
  }
}
