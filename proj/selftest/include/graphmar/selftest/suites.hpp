#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace graphmar::selftest {

inline constexpr float kReferenceSigma = 2.0f;

struct Options {
  int graph_instances = 50;
  int max_size = 32;
  int grad_seeds = 5;
  std::uint64_t seed = 0;
  /// Kernel width handed to the implementation under test. The oracles always
  /// use kReferenceSigma, so changing this must make the weight suites fail.
  float sigma = kReferenceSigma;
};

struct SuiteResult {
  std::string name;
  bool passed = false;
  int cases = 0;
  /// Largest observed error for tolerance-based suites, mismatches otherwise.
  double worst = 0.0;
  std::string detail;
  double seconds = 0.0;
};

std::vector<std::string> suite_names();
SuiteResult run_suite(const std::string& name, const Options& options);
std::vector<SuiteResult> run_all(const Options& options);
std::string format_table(const std::vector<SuiteResult>& results);

}  // namespace graphmar::selftest
