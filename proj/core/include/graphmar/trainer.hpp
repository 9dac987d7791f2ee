#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphmar/dataset.hpp"
#include "graphmar/losses.hpp"
#include "graphmar/metrics.hpp"
#include "graphmar/network.hpp"

namespace graphmar {

struct TrainConfig {
  int epochs = 30;
  int batch = 4;
  float lr0 = 4e-4f;
  int halve_every = 10;
  double lambda = 0.1;
  AlignmentVariant alignment = AlignmentVariant::kMse;
  std::uint64_t seed = 0;
  /// When set: epoch log CSV, best/ and final/ checkpoints and NaN dumps go here.
  std::optional<std::filesystem::path> output_dir;
  /// Evaluate on the held-out split after every epoch (needed for "best").
  bool validate = true;
};

void validate(const TrainConfig& config);

/// lr0 * 2^-floor(epoch / halve_every), epochs counted from zero.
float learning_rate(const TrainConfig& config, int epoch);

struct EpochLog {
  int epoch = 0;
  float lr = 0.0f;
  double l1 = 0.0;
  double graph = 0.0;
  double total = 0.0;
  double validation_psnr = 0.0;
  double seconds = 0.0;
};

std::string epoch_log_header();
std::string to_csv_row(const EpochLog& e);

/// Thrown when a batch loss is not finite. The offending batch has been
/// written to dump_dir when an output directory was configured.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::filesystem::path dump_dir)
      : std::runtime_error(what), dump_dir(std::move(dump_dir)) {}
  std::filesystem::path dump_dir;
};

/// Training samples with their precomputed graph contexts.
struct PreparedSplit {
  std::vector<const Sample*> samples;
  std::vector<SampleContext> contexts;
};

PreparedSplit prepare_split(const std::vector<Sample>& samples, const BackboneConfig& config);

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_validation_psnr = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam over L1(Y_hat, Y) + lambda * alignment(G_A, G). Deterministic given
/// the seeds of the network and the config.
TrainResult train(Network& net, const PreparedSplit& train_split, const PreparedSplit* validation,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

// ---- Evaluation ------------------------------------------------------------

struct GroupMetrics {
  std::string name;
  int count = 0;
  WindowedMetrics mean;
};

struct EvaluationReport {
  std::vector<WindowedMetrics> per_sample;
  std::vector<GroupMetrics> by_implants;
  std::vector<GroupMetrics> by_area_quintile;
  GroupMetrics average;
  /// Mean Pearson(G_A, G) over multi-implant samples; empty without attention.
  std::optional<double> attention_pearson;
};

/// Area quintile (0..4) per sample: rank of metal_area (ties by index) times 5 / n.
std::vector<int> area_quintiles(std::span<const Sample* const> samples);

/// Metrics of given predictions against the samples' Y.
EvaluationReport evaluate_predictions(std::span<const Tensor> predictions_hu,
                                      std::span<const Sample* const> samples);

EvaluationReport evaluate(Network& net, const PreparedSplit& split);

std::string report_to_json(const EvaluationReport& report);
std::string report_to_table(const EvaluationReport& report);

/// Mean Pearson correlation between min-max normalized attention maps and the
/// density prior at the attention scale, over samples with >= 2 implants.
std::optional<double> attention_alignment(std::span<const Prediction> predictions,
                                          std::span<const SampleContext* const> contexts);

}  // namespace graphmar
