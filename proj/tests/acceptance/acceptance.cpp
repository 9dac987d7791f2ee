// Acceptance run: one PASS/FAIL line per headline criterion, progress on stderr.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/dataset.hpp"
#include "graphmar/fusion.hpp"
#include "graphmar/geometry_graph.hpp"
#include "graphmar/losses.hpp"
#include "graphmar/metrics.hpp"
#include "graphmar/network.hpp"
#include "graphmar/phantom.hpp"
#include "graphmar/selftest/gradcheck.hpp"
#include "graphmar/selftest/suites.hpp"
#include "graphmar/trainer.hpp"

using namespace graphmar;
namespace fs = std::filesystem;
namespace st = graphmar::selftest;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome()> run;
};

void progress(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

// ---- 1: graph oracle suites ---------------------------------------------------

Outcome graph_oracles() {
  st::Options o;
  o.graph_instances = 50;
  o.max_size = 32;
  const auto t0 = Clock::now();
  int min_cases = 1 << 30;
  std::vector<std::string> failed;
  for (const char* name : {"components", "boundary", "bresenham", "density", "polar", "angular-weight",
                           "topk-adjacency", "adjacency-structure"}) {
    const auto r = st::run_suite(name, o);
    min_cases = std::min(min_cases, r.cases);
    if (!r.passed) failed.push_back(std::string(name) + " (" + r.detail + ")");
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "8 suites, >=" << min_cases << " instances each, " << fmt("%.1f", t) << " s";
  for (const auto& f : failed) d << "; failed " << f;
  return {failed.empty() && min_cases >= 50 && t < 30.0, d.str()};
}

// ---- 2: adjacency structure on simulated masks ----------------------------------

Outcome adjacency_structure() {
  double worst_asym = 0.0;
  int worst_degree = 0, flag_errors = 0, diag_errors = 0, graphs = 0;
  for (int n_impl = 1; n_impl <= 3; ++n_impl) {
    sim::PhantomOptions po;
    po.n_implants = n_impl;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      const sim::Phantom p = sim::random_phantom(1000 + 10 * n_impl + seed, po);
      const BinaryMask mask = geometry::extract_metal_mask(p.render());
      const auto density = geometry::density_from_mask(mask);
      const int n = density.implants.count();
      const auto g = artifact::build_artifact_graph(artifact::compute_polar(mask), density.density, n);
      ++graphs;
      std::vector<int> out_degree(g.adjacency.node_count(), 0);
      for (const auto& e : g.directed) ++out_degree[e.from];
      worst_degree = std::max(worst_degree, *std::max_element(out_degree.begin(), out_degree.end()));
      if (g.density_reweighted != (n >= 2)) ++flag_errors;
      const auto rows = g.adjacency.row_offsets();
      const auto cols = g.adjacency.columns();
      for (int i = 0; i < g.adjacency.node_count(); ++i)
        for (int k = rows[i]; k < rows[i + 1]; ++k) {
          const int j = cols[k];
          if (i == j && g.adjacency.weight(i, i) != 0.0f) ++diag_errors;
          worst_asym = std::max(worst_asym, static_cast<double>(std::fabs(g.adjacency.weight(i, j) - g.adjacency.weight(j, i))));
        }
    }
  }
  std::ostringstream d;
  d << graphs << " graphs at 64x64: max asymmetry " << fmt("%.2g", worst_asym) << ", max out-degree " << worst_degree
    << ", diagonal errors " << diag_errors << ", reweighting flag errors " << flag_errors;
  return {worst_asym <= 1e-6 && worst_degree <= 16 && diag_errors == 0 && flag_errors == 0, d.str()};
}

// ---- 3: gradients ---------------------------------------------------------------

Outcome gradients() {
  st::Options o;
  o.grad_seeds = 5;
  const auto t0 = Clock::now();
  const auto a = st::run_suite("gradients", o);
  const auto b = st::run_suite("graphmoe-gradient", o);
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "5 seeds, worst rel err " << fmt("%.2g", std::max(a.worst, b.worst)) << ", " << fmt("%.1f", t) << " s";
  if (!a.passed) d << "; ops: " << a.detail;
  if (!b.passed) d << "; graphmoe: " << b.detail;
  return {a.passed && b.passed && std::max(a.worst, b.worst) < 1e-3 && t < 120.0, d.str()};
}

// ---- 4: identity at initialization ----------------------------------------------

Outcome identity_at_init() {
  DatasetConfig dc;
  dc.n_train = 4;
  dc.n_test = 0;
  dc.seed = 77;
  const auto samples = generate_split(dc, Split::kTrain);
  BackboneConfig on_cfg, off_cfg;
  off_cfg.enable_graphmoe = false;
  bool equal = true;
  double worst_route = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Network on(on_cfg, seed), off(off_cfg, seed);
    std::vector<SampleContext> c_on, c_off;
    std::vector<const Tensor*> images;
    for (const Sample& s : samples) {
      c_on.push_back(make_sample_context(s.m, on_cfg));
      c_off.push_back(make_sample_context(s.m, off_cfg));
      images.push_back(&s.x);
    }
    std::vector<const SampleContext*> p_on, p_off;
    for (auto& c : c_on) p_on.push_back(&c);
    for (auto& c : c_off) p_off.push_back(&c);
    ad::Tape t1, t2;
    const auto a = on.forward(t1, t1.constant(pack_batch(images)), p_on, true);
    const auto b = off.forward(t2, t2.constant(pack_batch(images)), p_off, true);
    equal = equal && t1.value(a.prediction) == t2.value(b.prediction);
    for (ad::Var w : a.routings)
      for (float v : t1.value(w).data()) worst_route = std::max(worst_route, std::fabs(v - 1.0 / 3.0));
  }
  std::ostringstream d;
  d << "3 seeds x 4 samples: outputs " << (equal ? "bit-equal" : "DIFFER") << ", max |routing - 1/3| "
    << fmt("%.2g", worst_route);
  return {equal && worst_route < 1e-6, d.str()};
}

// ---- 5 and 6: training runs ---------------------------------------------------

struct EndToEnd {
  bool ran = false;
  std::string error;
  std::vector<double> moe_psnr, plain_psnr, pearson;
  double seconds = 0.0;
};

struct EndToEndOptions {
  std::vector<std::uint64_t> seeds{0};
  int base_channels = 16;
  int epochs = 30;
  fs::path workdir;
};

EndToEnd& end_to_end(const EndToEndOptions& opt) {
  static EndToEnd result;
  if (result.ran) return result;
  result.ran = true;
  const auto t0 = Clock::now();
  try {
    for (std::uint64_t seed : opt.seeds) {
      DatasetConfig dc;
      dc.n_train = 200;
      dc.n_test = 40;
      dc.size = 64;
      dc.min_implants = 2;
      dc.max_implants = 3;
      dc.seed = seed;
      const fs::path data = opt.workdir / ("corpus_" + std::to_string(seed));
      fs::remove_all(data);
      progress("simulating corpus seed " + std::to_string(seed));
      make_dataset(data, dc);
      const Corpus corpus = load_corpus(data);

      TrainConfig tc;
      tc.epochs = opt.epochs;
      tc.seed = seed;
      tc.validate = false;
      for (bool moe : {false, true}) {
        BackboneConfig bc;
        bc.base_channels = opt.base_channels;
        bc.enable_graphmoe = moe;
        Network net(bc, seed);
        const PreparedSplit tr = prepare_split(corpus.train, bc);
        const PreparedSplit te = prepare_split(corpus.test, bc);
        const auto t1 = Clock::now();
        train(net, tr, nullptr, tc);
        const EvaluationReport rep = evaluate(net, te);
        const double psnr = rep.average.mean.psnr_mean();
        progress(std::string(moe ? "graphmoe" : "plain") + " seed " + std::to_string(seed) + ": " +
                 fmt("%.3f dB", psnr) + " in " + fmt("%.0f s", seconds_since(t1)));
        (moe ? result.moe_psnr : result.plain_psnr).push_back(psnr);
        if (moe && rep.attention_pearson) result.pearson.push_back(*rep.attention_pearson);
      }
    }
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  result.seconds = seconds_since(t0);
  return result;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

Outcome alignment(const EndToEndOptions& opt) {
  // The loss vanishes without a multi-implant prior and when G_A equals G.
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor att = gradcheck::random_tensor({16, 16}, seed, 0.0f, 1.0f);
    const Tensor g = gradcheck::random_tensor({16, 16}, seed + 100, 0.0f, 1.0f);
    for (auto v : {AlignmentVariant::kMse, AlignmentVariant::kKl}) {
      worst = std::max(worst, std::fabs(geometric_alignment_loss(att, g, 0, v)));
      worst = std::max(worst, std::fabs(geometric_alignment_loss(att, g, 1, v)));
      worst = std::max(worst, std::fabs(geometric_alignment_loss(g, g, 2, v)));
    }
  }
  const EndToEnd& e = end_to_end(opt);
  const double r = mean(e.pearson);
  std::ostringstream d;
  d << "max loss in zero cases " << fmt("%.2g", worst) << ", test Pearson(G_A, G) after training " << fmt("%.3f", r);
  if (!e.error.empty()) d << "; training failed: " << e.error;
  return {worst <= 1e-9 && e.error.empty() && !e.pearson.empty() && r > 0.5, d.str()};
}

Outcome headline(const EndToEndOptions& opt) {
  const EndToEnd& e = end_to_end(opt);
  if (!e.error.empty()) return {false, "training failed: " + e.error};
  const double gain = mean(e.moe_psnr) - mean(e.plain_psnr);
  std::ostringstream d;
  d << "graphmoe " << fmt("%.3f", mean(e.moe_psnr)) << " dB vs plain " << fmt("%.3f", mean(e.plain_psnr))
    << " dB (gain " << fmt("%+.3f", gain) << " dB, " << opt.seeds.size() << " corpus seed(s), base width "
    << opt.base_channels << ", " << opt.epochs << " epochs each), " << fmt("%.0f", e.seconds) << " s";
  return {gain >= 0.3 && e.seconds < 20 * 60, d.str()};
}

// ---- 7: normalized gain --------------------------------------------------------

Outcome normalized_gains() {
  const double a = normalized_gain(43.89, 40.54, 33.71, 50.0);
  const double b = normalized_gain(39.44, 37.35, 26.94, 50.0);
  std::ostringstream d;
  d << fmt("%+.2f", a) << " and " << fmt("%+.2f", b);
  return {std::fabs(a - 20.6) <= 0.05 && std::fabs(b - 9.1) <= 0.05, d.str()};
}

// ---- 8: simulator ------------------------------------------------------------

Outcome simulator() {
  double worst_psnr = 1e9;
  for (auto [n, r] : {std::pair{64, 20.0}, std::pair{64, 12.0}, std::pair{96, 30.0}}) {
    const Tensor disk = sim::disk_image(n, (n - 1) / 2.0 + 1.5, (n - 1) / 2.0 - 2.0, r);
    sim::ScanGeometry g;
    g.n_angles = std::max(90, n * 3 / 2);
    g.n_detectors = n + n / 2 - 1;
    const Tensor rec = sim::fbp(sim::radon(disk, g), n, g);
    double se = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (sim::inside_reconstruction_circle(i, j, n)) {
          const double dlt = rec.at(i, j) - disk.at(i, j);
          se += dlt * dlt;
          ++count;
        }
    worst_psnr = std::min(worst_psnr, 10.0 * std::log10(1.0 / (se / count)));
  }

  double worst_ratio = 1e9;
  const int phantoms = 20;
  sim::PhantomOptions po;
  po.n_implants = 2;
  for (int k = 0; k < phantoms; ++k) {
    const sim::SimulatedSample s = sim::simulate(sim::random_phantom(500 + k, po));
    const auto d = geometry::density_from_mask(BinaryMask::from_tensor(s.m));
    double in = 0.0, out = 0.0;
    int n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (s.m[i] != 0.0f) continue;
      const double e = std::fabs(s.x[i] - s.y[i]);
      if (d.density[i] > 0.0f) {
        in += e;
        ++n_in;
      } else {
        out += e;
        ++n_out;
      }
    }
    const double ratio = n_in == 0 ? 0.0 : (in / n_in) / std::max(out / n_out, 1e-12);
    worst_ratio = std::min(worst_ratio, ratio);
  }
  std::ostringstream d;
  d << "worst disk round trip " << fmt("%.1f", worst_psnr) << " dB, worst inside/outside artifact ratio "
    << fmt("%.2f", worst_ratio) << " over " << phantoms << " two-implant phantoms";
  return {worst_psnr >= 25.0 && worst_ratio >= 2.0, d.str()};
}

// ---- 9: fusion identities --------------------------------------------------------

Outcome fusion_identities() {
  int violations = 0, checks = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = gradcheck::random_tensor({32, 32}, seed, -1000.0f, 3000.0f);
    const Tensor y = gradcheck::random_tensor({32, 32}, seed + 50, -1000.0f, 3000.0f);
    const Tensor a = gradcheck::random_tensor({32, 32}, seed + 99, 0.0f, 1.0f);
    for (float t : {0.0f, 0.5f, 1.0f}) {
      violations += !(clinical_fuse(x, y, a, {t, 1.0f}) == y);
      violations += !(clinical_fuse(x, y, Tensor({32, 32}, 1.0f), {t, 0.3f}) == y);
      checks += 2;
    }
    violations += !(clinical_fuse(x, y, Tensor({32, 32}, 0.0f), {0.5f, 0.0f}) == x);
    ++checks;
  }
  return {violations == 0, std::to_string(checks) + " exact identity checks, " + std::to_string(violations) + " violations"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Headline acceptance checks"};
  fs::path workdir = fs::temp_directory_path() / "graphmar_acceptance";
  EndToEndOptions e2e;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory for corpora");
  app.add_option("--seeds", e2e.seeds, "Corpus and initialization seeds for the end-to-end comparison")
      ->capture_default_str();
  app.add_option("--base-channels", e2e.base_channels, "Backbone width for the end-to-end comparison")
      ->capture_default_str();
  app.add_option("--epochs", e2e.epochs, "Epochs per training run")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  e2e.workdir = workdir;

  const std::vector<Criterion> criteria = {
      {1, "graph oracle suites", graph_oracles},
      {2, "adjacency structure", adjacency_structure},
      {3, "gradient checks", gradients},
      {4, "identity at initialization", identity_at_init},
      {5, "geometric alignment", [&] { return alignment(e2e); }},
      {6, "end-to-end GraphMoE gain", [&] { return headline(e2e); }},
      {7, "normalized gain", normalized_gains},
      {8, "simulator", simulator},
      {9, "fusion identities", fusion_identities},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    progress("running " + std::to_string(c.id) + " " + c.title);
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.title << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
