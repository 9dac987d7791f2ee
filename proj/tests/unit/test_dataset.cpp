#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "graphmar/dataset.hpp"
#include "graphmar/geometry_graph.hpp"

using namespace graphmar;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / ("graphmar_test_dataset_" + std::string(name));
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

DatasetConfig small(int n_train, int n_test, std::uint64_t seed) {
  DatasetConfig c;
  c.n_train = n_train;
  c.n_test = n_test;
  c.seed = seed;
  c.size = 32;
  return c;
}

}  // namespace

TEST_CASE("sample seeds") {
  CHECK(sample_seed(5, Split::kTrain, 3) == (5u ^ 3u));
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 50; ++i) {
    seen.insert(sample_seed(9, Split::kTrain, i));
    seen.insert(sample_seed(9, Split::kTest, i));
  }
  CHECK(seen.size() == 100);
}

TEST_CASE("configuration validation") {
  CHECK_NOTHROW(validate(DatasetConfig{}));
  DatasetConfig c;
  c.min_implants = 0;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = {};
  c.max_implants = 1;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = {};
  c.n_train = -1;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  c = {};
  c.size = 24;
  CHECK_THROWS_AS(validate(c), std::invalid_argument);
  CHECK(parse_generator(to_string(sim::Generator::kAnalytic)) == sim::Generator::kAnalytic);
  CHECK(parse_generator(to_string(sim::Generator::kFbp)) == sim::Generator::kFbp);
  CHECK_THROWS_AS(parse_generator("nope"), std::invalid_argument);
}

TEST_CASE("generated samples are consistent") {
  const Corpus c = generate_corpus(small(6, 3, 1));
  CHECK(c.train.size() == 6);
  CHECK(c.test.size() == 3);
  for (const Sample& s : c.train) {
    CHECK(s.x.shape() == Shape{32, 32});
    CHECK(s.y.shape() == Shape{32, 32});
    CHECK(s.m.shape() == Shape{32, 32});
    CHECK(s.n_implants >= 2);
    CHECK(s.n_implants <= 3);
    CHECK(s.metal_area == static_cast<int>(s.m.sum()));
    for (float v : s.m.data()) CHECK((v == 0.0f || v == 1.0f));
  }
}

TEST_CASE("thread count does not change the data") {
  const DatasetConfig cfg = small(5, 0, 4);
  const auto a = generate_split(cfg, Split::kTrain, 1);
  const auto b = generate_split(cfg, Split::kTrain, 3);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
    CHECK(a[i].m == b[i].m);
  }
}

TEST_CASE("test split does not depend on the training size") {
  const auto a = generate_split(small(3, 4, 2), Split::kTest);
  const auto b = generate_split(small(9, 4, 2), Split::kTest);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].x == b[i].x);
}

TEST_CASE("single implant corpora") {
  DatasetConfig cfg = small(6, 2, 3);
  cfg.min_implants = cfg.max_implants = 1;
  const Corpus c = generate_corpus(cfg);
  for (const auto* split : {&c.train, &c.test})
    for (const Sample& s : *split) {
      CHECK(s.n_implants == 1);
      CHECK(geometry::connected_components(BinaryMask::from_tensor(s.m)).count() == 1);
    }
}

TEST_CASE("same seed gives byte-identical corpora on disk") {
  const fs::path a = scratch("a"), b = scratch("b"), c = scratch("c");
  make_dataset(a, small(4, 2, 11));
  make_dataset(b, small(4, 2, 11), 2);
  make_dataset(c, small(4, 2, 12));
  int files = 0;
  bool any_diff = false;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    CHECK(slurp(e.path()) == slurp(b / rel));
    if (rel.extension() == ".bt" && slurp(e.path()) != slurp(c / rel)) any_diff = true;
    ++files;
  }
  CHECK(files == 1 + 3 * 6);
  CHECK(any_diff);
}

TEST_CASE("manifest and reload") {
  const fs::path root = scratch("manifest");
  const DatasetManifest written = make_dataset(root, small(5, 2, 6));
  const DatasetManifest m = load_manifest(root);
  CHECK(m.train.size() == 5);
  CHECK(m.test.size() == 2);
  CHECK(m.config.seed == 6);
  CHECK(m.config.size == 32);
  CHECK(m.train[3].x == written.train[3].x);
  CHECK(fs::exists(root / m.train[3].x));

  const Corpus loaded = load_corpus(root);
  const Corpus fresh = generate_corpus(small(5, 2, 6));
  CHECK(loaded.size == 32);
  for (std::size_t i = 0; i < fresh.train.size(); ++i) {
    CHECK(loaded.train[i].x == fresh.train[i].x);
    CHECK(loaded.train[i].m == fresh.train[i].m);
    CHECK(loaded.train[i].n_implants == m.train[i].n_implants);
  }

  fs::remove(root / m.test[1].y);
  CHECK_THROWS(load_corpus(root));
}

TEST_CASE("full-size manifest entry count") {
  const fs::path root = scratch("full");
  make_dataset(root, small(200, 1, 0));
  CHECK(load_manifest(root).train.size() == 200);
}
