#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "graphmar/phantom.hpp"
#include "graphmar/tensor.hpp"

namespace graphmar {

struct DatasetConfig {
  int n_train = 200;
  int n_test = 40;
  std::uint64_t seed = 0;
  int min_implants = 2;
  int max_implants = 3;
  int size = 64;
  sim::SimulationOptions simulation;
};

void validate(const DatasetConfig& config);

struct SampleRecord {
  std::string x;
  std::string y;
  std::string m;
  int n_implants = 0;
  int metal_area = 0;
};

struct DatasetManifest {
  DatasetConfig config;
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
};

/// One (X, Y, M) triple, each size x size.
struct Sample {
  Tensor x;
  Tensor y;
  Tensor m;
  int n_implants = 0;
  int metal_area = 0;
};

struct Corpus {
  int size = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

enum class Split { kTrain, kTest };

/// Seed of one sample: seed ^ index for training samples, and
/// derive_seed(seed, "test") ^ index for test samples, so the test set does not
/// depend on n_train.
std::uint64_t sample_seed(std::uint64_t seed, Split split, int index);

/// Generates one split in memory. Samples are independent and generated on
/// worker threads; the result does not depend on the thread count.
std::vector<Sample> generate_split(const DatasetConfig& config, Split split, int threads = 0);

Corpus generate_corpus(const DatasetConfig& config, int threads = 0);

/// Writes <root>/manifest.json and <root>/{train,test}/{x,y,m}_%05d.bt.
/// Output is byte-identical for identical configs.
DatasetManifest make_dataset(const std::filesystem::path& root, const DatasetConfig& config, int threads = 0);

DatasetManifest load_manifest(const std::filesystem::path& root);

/// Loads every referenced tensor and checks shapes against the manifest.
Corpus load_corpus(const std::filesystem::path& root);

std::string to_string(sim::Generator g);
sim::Generator parse_generator(const std::string& name);

}  // namespace graphmar
