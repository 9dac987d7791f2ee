#include "graphmar/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "graphmar/rng.hpp"
#include "graphmar/tensor_io.hpp"

namespace graphmar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCorpusFormat = "graphmar-corpus";
constexpr int kCorpusVersion = 1;

std::string sample_name(const char* kind, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%05d.bt", kind, index);
  return buf;
}

int worker_count(int requested, int jobs) {
  int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(n, 1, std::max(1, jobs));
}

json record_to_json(const SampleRecord& r) {
  return json{{"x", r.x}, {"y", r.y}, {"m", r.m}, {"n_implants", r.n_implants}, {"metal_area", r.metal_area}};
}

SampleRecord record_from_json(const json& j) {
  SampleRecord r;
  r.x = j.at("x").get<std::string>();
  r.y = j.at("y").get<std::string>();
  r.m = j.at("m").get<std::string>();
  r.n_implants = j.at("n_implants").get<int>();
  r.metal_area = j.at("metal_area").get<int>();
  return r;
}

}  // namespace

std::string to_string(sim::Generator g) { return g == sim::Generator::kFbp ? "fbp" : "analytic"; }

sim::Generator parse_generator(const std::string& name) {
  if (name == "fbp") return sim::Generator::kFbp;
  if (name == "analytic") return sim::Generator::kAnalytic;
  throw std::invalid_argument("unknown generator '" + name + "' (expected fbp or analytic)");
}

void validate(const DatasetConfig& c) {
  if (c.n_train < 0 || c.n_test < 0) throw std::invalid_argument("sample counts must be non-negative");
  if (c.min_implants < 1 || c.max_implants > 4 || c.min_implants > c.max_implants)
    throw std::invalid_argument("implants per image must satisfy 1 <= min <= max <= 4");
  if (c.size < 32 || c.size % 8 != 0) throw std::invalid_argument("image size must be a multiple of 8, at least 32");
}

std::uint64_t sample_seed(std::uint64_t seed, Split split, int index) {
  const std::uint64_t base = split == Split::kTrain ? seed : derive_seed(seed, "test");
  return base ^ static_cast<std::uint64_t>(index);
}

std::vector<Sample> generate_split(const DatasetConfig& config, Split split, int threads) {
  validate(config);
  const int count = split == Split::kTrain ? config.n_train : config.n_test;
  std::vector<Sample> out(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        const std::uint64_t s = sample_seed(config.seed, split, i);
        SplitMix64 rng(s);
        sim::PhantomOptions po;
        po.size = config.size;
        // Implant sizes are tuned for 64x64 and shrink with smaller images.
        const double scale = std::min(1.0, config.size / 64.0);
        po.implant_radius_min = std::max(1.0, po.implant_radius_min * scale);
        po.implant_radius_max = std::max(po.implant_radius_min + 0.5, po.implant_radius_max * scale);
        po.n_implants = rng.uniform_int(config.min_implants, config.max_implants);
        const sim::Phantom phantom = sim::random_phantom(rng.next(), po);
        sim::SimulatedSample sample = sim::simulate(phantom, config.simulation);
        out[static_cast<std::size_t>(i)] =
            Sample{std::move(sample.x), std::move(sample.y), std::move(sample.m), sample.n_implants, sample.metal_area};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int n_workers = worker_count(threads, count);
  std::vector<std::thread> pool;
  for (int t = 1; t < n_workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

Corpus generate_corpus(const DatasetConfig& config, int threads) {
  Corpus c;
  c.size = config.size;
  c.train = generate_split(config, Split::kTrain, threads);
  c.test = generate_split(config, Split::kTest, threads);
  return c;
}

DatasetManifest make_dataset(const fs::path& root, const DatasetConfig& config, int threads) {
  const Corpus corpus = generate_corpus(config, threads);
  DatasetManifest manifest;
  manifest.config = config;

  auto write_split = [&](const std::vector<Sample>& samples, const char* dir, std::vector<SampleRecord>& records) {
    fs::create_directories(root / dir);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Sample& s = samples[i];
      SampleRecord r;
      r.x = std::string(dir) + "/" + sample_name("x", static_cast<int>(i));
      r.y = std::string(dir) + "/" + sample_name("y", static_cast<int>(i));
      r.m = std::string(dir) + "/" + sample_name("m", static_cast<int>(i));
      r.n_implants = s.n_implants;
      r.metal_area = s.metal_area;
      save_tensor(s.x, root / r.x);
      save_tensor(s.y, root / r.y);
      save_tensor(s.m, root / r.m);
      records.push_back(std::move(r));
    }
  };
  write_split(corpus.train, "train", manifest.train);
  write_split(corpus.test, "test", manifest.test);

  const auto& sim = config.simulation;
  json j;
  j["format"] = kCorpusFormat;
  j["version"] = kCorpusVersion;
  j["seed"] = config.seed;
  j["size"] = config.size;
  j["min_implants"] = config.min_implants;
  j["max_implants"] = config.max_implants;
  j["generator"] = to_string(sim.generator);
  j["n_angles"] = sim.geometry.n_angles;
  j["n_detectors"] = sim.geometry.n_detectors;
  j["mu_water"] = sim.mu_water;
  j["beta"] = sim.beta;
  j["gamma"] = sim.gamma;
  j["units"] = {{"x", "HU"}, {"y", "HU"}, {"m", "binary"}};
  j["train"] = json::array();
  for (const auto& r : manifest.train) j["train"].push_back(record_to_json(r));
  j["test"] = json::array();
  for (const auto& r : manifest.test) j["test"].push_back(record_to_json(r));

  std::ofstream os(root / "manifest.json", std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + (root / "manifest.json").string());
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("failed writing " + (root / "manifest.json").string());
  return manifest;
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCorpusFormat) throw FormatError(path.string() + ": not a corpus manifest");
    if (j.at("version").get<int>() != kCorpusVersion) throw FormatError(path.string() + ": unsupported version");
    DatasetManifest m;
    m.config.seed = j.at("seed").get<std::uint64_t>();
    m.config.size = j.at("size").get<int>();
    m.config.min_implants = j.at("min_implants").get<int>();
    m.config.max_implants = j.at("max_implants").get<int>();
    m.config.simulation.generator = parse_generator(j.at("generator").get<std::string>());
    m.config.simulation.geometry.n_angles = j.at("n_angles").get<int>();
    m.config.simulation.geometry.n_detectors = j.at("n_detectors").get<int>();
    m.config.simulation.mu_water = j.at("mu_water").get<double>();
    m.config.simulation.beta = j.at("beta").get<double>();
    m.config.simulation.gamma = j.at("gamma").get<double>();
    for (const auto& r : j.at("train")) m.train.push_back(record_from_json(r));
    for (const auto& r : j.at("test")) m.test.push_back(record_from_json(r));
    m.config.n_train = static_cast<int>(m.train.size());
    m.config.n_test = static_cast<int>(m.test.size());
    return m;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Corpus load_corpus(const fs::path& root) {
  const DatasetManifest m = load_manifest(root);
  Corpus c;
  c.size = m.config.size;
  const Shape expected{m.config.size, m.config.size};
  auto load_split = [&](const std::vector<SampleRecord>& records, std::vector<Sample>& out) {
    for (const auto& r : records) {
      Sample s{load_tensor(root / r.x), load_tensor(root / r.y), load_tensor(root / r.m), r.n_implants, r.metal_area};
      for (const Tensor* t : {&s.x, &s.y, &s.m})
        if (t->shape() != expected)
          throw FormatError("sample " + r.x + ": shape " + shape_to_string(t->shape()) + " does not match manifest");
      out.push_back(std::move(s));
    }
  };
  load_split(m.train, c.train);
  load_split(m.test, c.test);
  return c;
}

}  // namespace graphmar
