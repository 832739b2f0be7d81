#include <doctest.h>

#include <fstream>

#include "czsl/param_tree.hpp"
#include "testutil.hpp"

using namespace czsl;
using czsl::test::random_normal_tensor;

TEST_CASE("param tree iteration order is sorted and stable") {
  ParamTree t;
  t.set("zeta", Tensor::scalar(1));
  t.set("alpha", Tensor::scalar(2));
  t.set("mid", Tensor::scalar(3));
  std::vector<std::string> names = t.names();
  CHECK(names == std::vector<std::string>{"alpha", "mid", "zeta"});
}

TEST_CASE("param tree arithmetic requires matching structure") {
  ParamTree a, b;
  a.set("w", Tensor::from({2}, {1, 2}));
  b.set("w", Tensor::from({2}, {10, 20}));
  a.add_scaled(b, 0.1);
  CHECK(a.at("w")[0] == doctest::Approx(2.0));
  ParamTree c;
  c.set("w", Tensor::zeros({3}));
  CHECK_THROWS_AS(a.add_scaled(c, 1.0), ShapeError);
  ParamTree d;
  d.set("v", Tensor::zeros({2}));
  CHECK_THROWS_AS(a.add_scaled(d, 1.0), ShapeError);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  rng::Engine eng = rng::make_engine(99);
  ParamTree t;
  t.set("layer.w", random_normal_tensor({17, 5}, eng, 3.7));
  t.set("layer.b", random_normal_tensor({5}, eng, 0.01));
  t.set("odd/name with spaces", random_normal_tensor({2, 2, 2}, eng));
  // include values that stress the format
  Tensor exotic = Tensor::from({4}, {0.0, -0.0, 1e-308, 1.7976931348623157e308});
  t.set("exotic", exotic);

  czsl::test::TempDir dir("ckpt");
  auto path = dir.path() / "tree.ckpt";
  t.save(path);
  ParamTree loaded = ParamTree::load(path);
  CHECK(loaded == t);

  // saving twice produces identical bytes
  auto path2 = dir.path() / "tree2.ckpt";
  t.save(path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint load rejects corrupt files") {
  czsl::test::TempDir dir("ckpt_bad");
  auto path = dir.path() / "bad.ckpt";
  std::ofstream(path) << "not a checkpoint";
  CHECK_THROWS_AS(ParamTree::load(path), DataError);
  CHECK_THROWS_AS(ParamTree::load(dir.path() / "missing.ckpt"), DataError);
}
