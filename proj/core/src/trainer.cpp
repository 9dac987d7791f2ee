#include "graphmar/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "graphmar/checkpoint.hpp"
#include "graphmar/rng.hpp"
#include "graphmar/tensor_io.hpp"

namespace graphmar {

namespace fs = std::filesystem;
using nlohmann::json;

void validate(const TrainConfig& c) {
  if (c.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (c.batch < 2) throw std::invalid_argument("batch must be at least 2 (batch normalization)");
  if (!(c.lr0 > 0.0f)) throw std::invalid_argument("learning rate must be positive");
  if (c.halve_every < 1) throw std::invalid_argument("halve_every must be at least 1");
  if (!(c.lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
}

float learning_rate(const TrainConfig& c, int epoch) {
  return static_cast<float>(c.lr0 * std::ldexp(1.0, -(epoch / c.halve_every)));
}

std::string epoch_log_header() { return "epoch,lr,l1,graph,total,validation_psnr,seconds"; }

std::string to_csv_row(const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.6f,%.3f", e.epoch, e.lr, e.l1, e.graph, e.total,
                e.validation_psnr, e.seconds);
  return buf;
}

PreparedSplit prepare_split(const std::vector<Sample>& samples, const BackboneConfig& config) {
  PreparedSplit p;
  p.samples.reserve(samples.size());
  p.contexts.reserve(samples.size());
  for (const Sample& s : samples) {
    p.samples.push_back(&s);
    p.contexts.push_back(make_sample_context(s.m, config));
  }
  return p;
}

namespace {

// Batches of `size` over a permutation; a trailing singleton joins the
// previous batch so batch normalization always sees two samples.
std::vector<std::vector<int>> make_batches(const std::vector<int>& order, int size) {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(size)) {
    const std::size_t stop = std::min(order.size(), i + static_cast<std::size_t>(size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (out.size() >= 2 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

Tensor stack_attention_density(const PreparedSplit& split, const std::vector<int>& idx) {
  const Tensor& first = split.contexts[idx[0]].attention_density;
  const int h = first.dim(0);
  const int w = first.dim(1);
  Tensor out({static_cast<int>(idx.size()), 1, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Tensor& d = split.contexts[idx[i]].attention_density;
    std::copy(d.data().begin(), d.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

fs::path dump_batch(const fs::path& dir, const PreparedSplit& split, const std::vector<int>& idx, int epoch,
                    int step) {
  const fs::path d = dir / ("nan_dump_e" + std::to_string(epoch) + "_s" + std::to_string(step));
  fs::create_directories(d);
  json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["samples"] = idx;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const Sample& s = *split.samples[idx[i]];
    save_tensor(s.x, d / ("x_" + std::to_string(i) + ".bt"));
    save_tensor(s.y, d / ("y_" + std::to_string(i) + ".bt"));
    save_tensor(s.m, d / ("m_" + std::to_string(i) + ".bt"));
  }
  std::ofstream(d / "batch.json") << j.dump(2) << '\n';
  return d;
}

}  // namespace

TrainResult train(Network& net, const PreparedSplit& train_split, const PreparedSplit* validation,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  validate(config);
  if (train_split.samples.size() < 2) throw std::invalid_argument("training needs at least two samples");
  nn::Adam adam(nn::AdamConfig{config.lr0, 0.5f, 0.999f, 1e-8f});
  std::vector<ad::Parameter*> params = net.parameters();
  SplitMix64 shuffle_rng(derive_seed(config.seed, "shuffle"));

  std::ofstream csv;
  if (config.output_dir) {
    fs::create_directories(*config.output_dir);
    csv.open(*config.output_dir / "train_log.csv");
    csv << epoch_log_header() << '\n';
  }

  TrainResult result;
  std::vector<int> order(train_split.samples.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const float lr = learning_rate(config, epoch);
    adam.set_lr(lr);
    // Fisher-Yates with the shared stream keeps shuffles seed-deterministic.
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i)))]);

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    std::size_t seen = 0;
    int step = 0;
    for (const auto& idx : make_batches(order, config.batch)) {
      std::vector<const Tensor*> xs, ys;
      std::vector<const SampleContext*> ctx;
      std::vector<int> implants;
      for (int i : idx) {
        xs.push_back(&train_split.samples[i]->x);
        ys.push_back(&train_split.samples[i]->y);
        ctx.push_back(&train_split.contexts[i]);
        implants.push_back(train_split.contexts[i].n_implants);
      }
      ad::Tape tape;
      const ad::Var input = tape.constant(pack_batch(xs));
      const ad::Var target = tape.constant(pack_batch(ys));
      const ForwardResult fr = net.forward(tape, input, ctx, /*train=*/true);
      const ad::Var l1 = ad::mean_abs_error(tape, fr.prediction, target);
      ad::Var loss = l1;
      double graph_value = 0.0;
      if (fr.attention.valid()) {
        const ad::Var graph = alignment_loss(tape, fr.attention, stack_attention_density(train_split, idx), implants,
                                             config.alignment);
        graph_value = tape.value(graph)[0];
        if (config.lambda > 0.0) {
          const ad::Var terms[] = {l1, graph};
          const float factors[] = {1.0f, static_cast<float>(config.lambda)};
          loss = ad::weighted_scalar_sum(tape, terms, factors);
        }
      }
      const double l1_value = tape.value(l1)[0];
      const double total_value = l1_value + config.lambda * graph_value;
      if (!std::isfinite(total_value)) {
        fs::path dumped;
        if (config.output_dir) dumped = dump_batch(*config.output_dir, train_split, idx, epoch, step);
        throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + (dumped.empty() ? "" : "; batch dumped to " + dumped.string()),
                               dumped);
      }
      tape.backward(loss);
      adam.step(params);

      const double n = static_cast<double>(idx.size());
      log.l1 += l1_value * n;
      log.graph += graph_value * n;
      log.total += total_value * n;
      seen += idx.size();
      ++step;
    }
    log.l1 /= static_cast<double>(seen);
    log.graph /= static_cast<double>(seen);
    log.total /= static_cast<double>(seen);

    if (validation && config.validate && !validation->samples.empty()) {
      log.validation_psnr = evaluate(net, *validation).average.mean.psnr_mean();
      if (result.best_epoch < 0 || log.validation_psnr > result.best_validation_psnr) {
        result.best_epoch = epoch;
        result.best_validation_psnr = log.validation_psnr;
        if (config.output_dir) save_checkpoint(net, *config.output_dir / "best", {"best", epoch, log.validation_psnr});
      }
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (csv.is_open()) csv << to_csv_row(log) << std::endl;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  if (config.output_dir) {
    const double last = result.log.empty() ? 0.0 : result.log.back().validation_psnr;
    save_checkpoint(net, *config.output_dir / "final", {"final", config.epochs, last});
  }
  return result;
}

// ---- Evaluation ------------------------------------------------------------

namespace {

GroupMetrics average_group(const std::string& name, const std::vector<WindowedMetrics>& all,
                           const std::vector<int>& members) {
  GroupMetrics g;
  g.name = name;
  g.count = static_cast<int>(members.size());
  if (members.empty()) return g;
  for (int i : members) {
    g.mean.psnr_full += all[i].psnr_full;
    g.mean.ssim_full += all[i].ssim_full;
    g.mean.psnr_soft += all[i].psnr_soft;
    g.mean.ssim_soft += all[i].ssim_soft;
  }
  const double n = static_cast<double>(members.size());
  g.mean.psnr_full /= n;
  g.mean.ssim_full /= n;
  g.mean.psnr_soft /= n;
  g.mean.ssim_soft /= n;
  return g;
}

json group_json(const GroupMetrics& g) {
  return json{{"name", g.name},
              {"count", g.count},
              {"psnr_full", g.mean.psnr_full},
              {"ssim_full", g.mean.ssim_full},
              {"psnr_soft", g.mean.psnr_soft},
              {"ssim_soft", g.mean.ssim_soft},
              {"psnr_mean", g.mean.psnr_mean()},
              {"ssim_mean", g.mean.ssim_mean()}};
}

}  // namespace

std::vector<int> area_quintiles(std::span<const Sample* const> samples) {
  const int n = static_cast<int>(samples.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return samples[a]->metal_area < samples[b]->metal_area; });
  std::vector<int> q(static_cast<std::size_t>(n));
  for (int rank = 0; rank < n; ++rank) q[order[rank]] = rank * 5 / n;
  return q;
}

EvaluationReport evaluate_predictions(std::span<const Tensor> predictions_hu, std::span<const Sample* const> samples) {
  if (predictions_hu.size() != samples.size()) throw std::invalid_argument("one prediction per sample required");
  EvaluationReport r;
  for (std::size_t i = 0; i < samples.size(); ++i)
    r.per_sample.push_back(windowed_metrics(predictions_hu[i], samples[i]->y));

  std::vector<int> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  r.average = average_group("average", r.per_sample, all);

  std::map<int, std::vector<int>> by_n;
  for (std::size_t i = 0; i < samples.size(); ++i) by_n[samples[i]->n_implants].push_back(static_cast<int>(i));
  for (const auto& [n, members] : by_n)
    r.by_implants.push_back(average_group("implants=" + std::to_string(n), r.per_sample, members));

  const std::vector<int> q = area_quintiles(samples);
  std::vector<std::vector<int>> by_q(5);
  for (std::size_t i = 0; i < q.size(); ++i) by_q[q[i]].push_back(static_cast<int>(i));
  for (int k = 0; k < 5; ++k) {
    int lo = 0, hi = 0;
    for (std::size_t j = 0; j < by_q[k].size(); ++j) {
      const int a = samples[by_q[k][j]]->metal_area;
      lo = j == 0 ? a : std::min(lo, a);
      hi = j == 0 ? a : std::max(hi, a);
    }
    r.by_area_quintile.push_back(average_group(
        "area_q" + std::to_string(k + 1) + " [" + std::to_string(lo) + "," + std::to_string(hi) + "]", r.per_sample,
        by_q[k]));
  }
  return r;
}

std::optional<double> attention_alignment(std::span<const Prediction> predictions,
                                          std::span<const SampleContext* const> contexts) {
  double acc = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].attention.empty() || contexts[i]->n_implants < 2) continue;
    acc += pearson(minmax_norm(predictions[i].attention), minmax_norm(contexts[i]->attention_density));
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / n;
}

EvaluationReport evaluate(Network& net, const PreparedSplit& split) {
  std::vector<Tensor> inputs;
  std::vector<const SampleContext*> ctx;
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    inputs.push_back(split.samples[i]->x);
    ctx.push_back(&split.contexts[i]);
  }
  const std::vector<Prediction> preds = predict(net, inputs, ctx);
  std::vector<Tensor> outputs;
  for (const auto& p : preds) outputs.push_back(p.output_hu);
  EvaluationReport r = evaluate_predictions(outputs, split.samples);
  r.attention_pearson = attention_alignment(preds, ctx);
  return r;
}

std::string report_to_json(const EvaluationReport& r) {
  json j;
  j["average"] = group_json(r.average);
  j["by_implants"] = json::array();
  for (const auto& g : r.by_implants) j["by_implants"].push_back(group_json(g));
  j["by_area_quintile"] = json::array();
  for (const auto& g : r.by_area_quintile) j["by_area_quintile"].push_back(group_json(g));
  j["attention_pearson"] = r.attention_pearson ? json(*r.attention_pearson) : json(nullptr);
  j["samples"] = r.per_sample.size();
  return j.dump(2);
}

std::string report_to_table(const EvaluationReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %5s %10s %10s %10s %10s %10s\n", "group", "n", "PSNR(full)", "SSIM(full)",
                "PSNR(soft)", "SSIM(soft)", "PSNR(mean)");
  os << line;
  auto row = [&](const GroupMetrics& g) {
    std::snprintf(line, sizeof line, "%-24s %5d %10.3f %10.4f %10.3f %10.4f %10.3f\n", g.name.c_str(), g.count,
                  g.mean.psnr_full, g.mean.ssim_full, g.mean.psnr_soft, g.mean.ssim_soft, g.mean.psnr_mean());
    os << line;
  };
  for (const auto& g : r.by_implants) row(g);
  for (const auto& g : r.by_area_quintile) row(g);
  row(r.average);
  if (r.attention_pearson) {
    std::snprintf(line, sizeof line, "attention/density Pearson: %.4f\n", *r.attention_pearson);
    os << line;
  }
  return os.str();
}

}  // namespace graphmar
