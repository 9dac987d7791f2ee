// graphmar: simulate data, build graphs, train, infer, fuse and export.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 selftest failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "graphmar/artifact_graph.hpp"
#include "graphmar/bundle.hpp"
#include "graphmar/checkpoint.hpp"
#include "graphmar/dataset.hpp"
#include "graphmar/geometry_graph.hpp"
#include "graphmar/graphmoe.hpp"
#include "graphmar/resample.hpp"
#include "graphmar/selftest/suites.hpp"
#include "graphmar/tensor_io.hpp"
#include "graphmar/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace graphmar;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitSelftest = 3;

/// A failure attributable to the input data rather than the invocation.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

/// key = value config reader whose top-level keys belong to one subcommand.
class SubcommandConfig : public CLI::ConfigINI {
 public:
  explicit SubcommandConfig(std::string section) : section_(std::move(section)) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::vector<CLI::ConfigItem> items = CLI::ConfigINI::from_config(input);
    for (CLI::ConfigItem& item : items) {
      std::replace(item.name.begin(), item.name.end(), '_', '-');
      if (item.parents.empty() || item.parents.front() != section_) item.parents.insert(item.parents.begin(), section_);
    }
    return items;
  }

 private:
  std::string section_;
};

std::vector<int> parse_scales(const std::string& text) {
  std::vector<int> out;
  if (text.empty() || text == "none") return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

// ---- simulate ----------------------------------------------------------------

struct SimulateArgs {
  std::string out;
  DatasetConfig cfg;
  std::string generator = "fbp";
  int threads = 0;
};

int run_simulate(SimulateArgs& a) {
  a.cfg.simulation.generator = parse_generator(a.generator);
  const auto m = make_dataset(a.out, a.cfg, a.threads);
  std::printf("wrote %zu training and %zu test samples to %s\n", m.train.size(), m.test.size(), a.out.c_str());
  return kExitOk;
}

// ---- graph -------------------------------------------------------------------

struct GraphArgs {
  std::string input;
  std::string out;
  bool mask = false;
  float threshold_hu = geometry::kMetalThresholdHu;
  int stride = 1;
  int feature_size = 16;
  float sigma = 2.0f;
  int k_ang = 12;
  int k_rad = 4;
  bool no_reweight = false;
};

BinaryMask read_metal(const GraphArgs& a) {
  const fs::path p = a.input;
  if (!fs::exists(p)) throw DataError("input not found: " + a.input);
  Tensor t;
  if (p.extension() == ".png") {
    const GrayImage8 img = load_png(p);
    t = Tensor({img.height, img.width});
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = a.mask ? img.pixels[i]
                    : kFullRangeWindow.lo + img.pixels[i] / 255.0f * (kFullRangeWindow.hi - kFullRangeWindow.lo);
  } else {
    t = load_tensor(p);
  }
  if (a.mask) return BinaryMask::from_tensor(t);
  return geometry::extract_metal_mask(HuImage(t), a.threshold_hu);
}

int run_graph(const GraphArgs& a) {
  const BinaryMask metal = read_metal(a);
  if (!metal.any()) {
    std::cerr << "no metal found in " << a.input << " (threshold " << a.threshold_hu << " HU)\n";
    return kExitData;
  }
  const auto density = geometry::density_from_mask(metal, a.stride);
  artifact::ArtifactGraphOptions opts;
  opts.sigma = a.sigma;
  opts.k_angular = a.k_ang;
  opts.k_radial = a.k_rad;
  opts.enable_density_reweight = !a.no_reweight;
  const int fs_h = a.feature_size;
  const int fs_w = a.feature_size;
  const ScaleContext ctx =
      prepare_scale_context(metal, density.density, density.implants.count(), fs_h, fs_w, opts);

  const fs::path out = a.out;
  fs::create_directories(out);
  save_tensor(density.density, out / "density.bt");
  save_png(minmax_to_u8(density.density), out / "density.png");

  const auto& adj = ctx.adjacency;
  json aj;
  aj["nodes"] = adj.node_count();
  aj["height"] = fs_h;
  aj["width"] = fs_w;
  aj["edges"] = json::array();
  for (int i = 0; i < adj.node_count(); ++i)
    for (int k = adj.row_offsets()[i]; k < adj.row_offsets()[i + 1]; ++k)
      aj["edges"].push_back({i, adj.columns()[k], adj.weights()[k]});
  aj["edge_count"] = adj.nonzeros();
  aj["max_out_degree"] = ctx.max_out_degree;
  aj["density_reweighted"] = ctx.density_reweighted;
  aj["options"] = {{"k_angular", a.k_ang}, {"k_radial", a.k_rad}, {"sigma", a.sigma}};
  write_text(out / "adjacency.json", aj.dump(1) + "\n");
  constexpr int kDenseLimit = 1024;
  if (adj.node_count() <= kDenseLimit) save_tensor(adj.to_dense(), out / "adjacency_dense.bt");

  json ij;
  ij["count"] = density.implants.count();
  ij["height"] = metal.height();
  ij["width"] = metal.width();
  ij["metal_pixels"] = metal.count();
  ij["geometric_edges"] = density.edge_count;
  ij["implants"] = json::array();
  for (int i = 0; i < density.implants.count(); ++i) {
    const auto& comp = density.implants.components[i];
    double sr = 0, sc = 0;
    for (const Pixel& p : comp) {
      sr += p.row;
      sc += p.col;
    }
    ij["implants"].push_back({{"area", comp.size()},
                              {"boundary_pixels", density.boundaries.boundaries[i].size()},
                              {"centroid", {sr / comp.size(), sc / comp.size()}}});
  }
  write_text(out / "implants.json", ij.dump(2) + "\n");
  std::printf("%d implant(s), %zu geometric edges, %zu adjacency entries -> %s\n", density.implants.count(),
              density.edge_count, adj.nonzeros(), a.out.c_str());
  return kExitOk;
}

// ---- train / evaluate ------------------------------------------------------------

struct ModelArgs {
  int base_channels = 16;
  std::string scales = "2,4,8";
  bool no_graphmoe = false;
  bool no_graph_router = false;
  int experts = 3;
  int k_ang = 12;
  int k_rad = 4;
  float sigma = 2.0f;
  bool no_reweight = false;

  BackboneConfig backbone() const {
    BackboneConfig b;
    b.base_channels = base_channels;
    b.graphmoe_scales = parse_scales(scales);
    b.enable_graphmoe = !no_graphmoe;
    b.moe.experts = experts;
    b.moe.enable_graph_router = !no_graph_router;
    b.moe.graph.k_angular = k_ang;
    b.moe.graph.k_radial = k_rad;
    b.moe.graph.sigma = sigma;
    b.moe.graph.enable_density_reweight = !no_reweight;
    return b;
  }
};

void add_model_options(CLI::App* app, ModelArgs& m) {
  app->add_option("--base-channels", m.base_channels, "Backbone width")->capture_default_str();
  app->add_option("--scales", m.scales, "GraphMoE scales, comma separated subset of 2,4,8 or 'none'")
      ->capture_default_str();
  app->add_flag("--no-graphmoe", m.no_graphmoe, "Train the plain backbone");
  app->add_flag("--no-graph-router", m.no_graph_router, "Route from features only (no polar graph)");
  app->add_option("--experts", m.experts, "Experts per GraphMoE block")->capture_default_str();
  app->add_option("--k-ang", m.k_ang, "Angular neighbours per node")->capture_default_str();
  app->add_option("--k-rad", m.k_rad, "Radial neighbours per node")->capture_default_str();
  app->add_option("--sigma", m.sigma, "Gaussian width of edge weights")->capture_default_str();
  app->add_flag("--no-density-reweight", m.no_reweight, "Skip density reweighting of graph edges");
}

struct TrainArgs {
  std::string data;
  std::string out;
  ModelArgs model;
  TrainConfig cfg;
  std::string alignment = "mse";
  bool quiet = false;
};

int run_train(TrainArgs& a) {
  a.cfg.alignment = parse_alignment_variant(a.alignment);
  a.cfg.output_dir = fs::path(a.out);
  const Corpus corpus = load_corpus(a.data);
  const BackboneConfig bb = a.model.backbone();
  validate(bb, corpus.size);
  const PreparedSplit train_split = prepare_split(corpus.train, bb);
  const PreparedSplit test_split = prepare_split(corpus.test, bb);
  Network net(bb, a.cfg.seed);
  const TrainResult res = train(net, train_split, &test_split, a.cfg, [&](const EpochLog& e) {
    if (!a.quiet)
      std::printf("epoch %3d  lr %.2e  l1 %.5f  graph %.5f  total %.5f  val %.3f dB  (%.1fs)\n", e.epoch, e.lr, e.l1,
                  e.graph, e.total, e.validation_psnr, e.seconds);
  });
  const EvaluationReport report = evaluate(net, test_split);
  write_text(fs::path(a.out) / "evaluation.json", report_to_json(report) + "\n");
  write_text(fs::path(a.out) / "evaluation.txt", report_to_table(report));
  std::cout << report_to_table(report);
  if (res.best_epoch >= 0) std::printf("best epoch %d (%.3f dB)\n", res.best_epoch, res.best_validation_psnr);
  return kExitOk;
}

struct EvaluateArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  bool identity = false;
};

int run_evaluate(const EvaluateArgs& a) {
  const Corpus corpus = load_corpus(a.data);
  EvaluationReport report;
  if (a.identity) {
    std::vector<const Sample*> samples;
    std::vector<Tensor> outputs;
    for (const Sample& s : corpus.test) {
      samples.push_back(&s);
      outputs.push_back(s.x);
    }
    report = evaluate_predictions(outputs, samples);
  } else {
    if (a.checkpoint.empty()) throw CLI::ValidationError("--checkpoint", "required unless --identity is given");
    Network net = load_checkpoint(a.checkpoint);
    report = evaluate(net, prepare_split(corpus.test, net.config()));
  }
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "evaluation.json", report_to_json(report) + "\n");
    write_text(fs::path(a.out) / "evaluation.txt", report_to_table(report));
  }
  std::cout << report_to_table(report);
  return kExitOk;
}

// ---- infer / fuse / export-ui ------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string mask;
  std::string out;
};

int run_infer(const InferArgs& a) {
  Network net = load_checkpoint(a.checkpoint);
  const Tensor x = HuImage(load_tensor(a.input)).tensor();
  const BinaryMask metal =
      a.mask.empty() ? geometry::extract_metal_mask(HuImage(x)) : BinaryMask::from_tensor(load_tensor(a.mask));
  if (metal.height() != x.dim(0) || metal.width() != x.dim(1)) throw DataError("mask and input differ in shape");
  const SampleContext ctx = make_sample_context(metal.to_tensor(), net.config());
  const Tensor inputs[] = {x};
  const SampleContext* contexts[] = {&ctx};
  const Prediction p = predict(net, inputs, contexts).front();
  InferenceBundle b;
  b.input = x;
  b.prediction = p.output_hu;
  b.attention = p.attention_full.empty() ? Tensor(x.shape()) : p.attention_full;
  b.checkpoint_id = checkpoint_id(net);
  b.created = creation_timestamp();
  write_bundle(a.out, b);
  std::printf("bundle written to %s (checkpoint %s)\n", a.out.c_str(), b.checkpoint_id.c_str());
  return kExitOk;
}

struct FuseArgs {
  std::string bundle;
  std::string out;
  std::string png;
  FusionParams params;
};

int run_fuse(const FuseArgs& a) {
  const InferenceBundle b = read_bundle(a.bundle);
  const Tensor fused = fuse_bundle(b, a.params);
  save_tensor(fused, a.out);
  if (!a.png.empty()) save_png_gray(fused, a.png, kExportWindow.lo, kExportWindow.hi);
  return kExitOk;
}

// ---- selftest ------------------------------------------------------------------------

struct SelftestArgs {
  std::vector<std::string> suites;
  selftest::Options options;
};

int run_selftest(const SelftestArgs& a) {
  std::vector<selftest::SuiteResult> results;
  if (a.suites.empty()) {
    results = selftest::run_all(a.options);
  } else {
    for (const auto& s : a.suites) results.push_back(selftest::run_suite(s, a.options));
  }
  std::cout << selftest::format_table(results);
  for (const auto& r : results)
    if (!r.passed) return kExitSelftest;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graphmar: graph-routed mixture-of-experts metal artifact reduction toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");
  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
  };

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Generate a paired (X, Y, M) corpus with the CT simulator");
  c_sim->add_option("--out", sim.out, "Corpus directory")->required();
  c_sim->add_option("--n-train", sim.cfg.n_train)->capture_default_str();
  c_sim->add_option("--n-test", sim.cfg.n_test)->capture_default_str();
  c_sim->add_option("--min-implants", sim.cfg.min_implants)->capture_default_str();
  c_sim->add_option("--max-implants", sim.cfg.max_implants)->capture_default_str();
  c_sim->add_option("--size", sim.cfg.size, "Image side length")->capture_default_str();
  c_sim->add_option("--generator", sim.generator, "fbp or analytic")->capture_default_str();
  c_sim->add_option("--beta", sim.cfg.simulation.beta, "Metal-trace inflation")->capture_default_str();
  c_sim->add_option("--gamma", sim.cfg.simulation.gamma, "Quadratic metal term")->capture_default_str();
  c_sim->add_option("--mu-water", sim.cfg.simulation.mu_water, "Water attenuation per pixel")->capture_default_str();
  c_sim->add_option("--threads", sim.threads, "Worker threads (0 = hardware)")->capture_default_str();
  add_seed(c_sim);

  GraphArgs gr;
  auto* c_graph = app.add_subcommand("graph", "Build the density graph and artifact graph of one image or mask");
  c_graph->add_option("--input", gr.input, "HU image or mask (.bt or .png)")->required();
  c_graph->add_option("--out", gr.out, "Output directory")->required();
  c_graph->add_flag("--mask", gr.mask, "Treat the input as a binary mask (nonzero = metal)");
  c_graph->add_option("--threshold-hu", gr.threshold_hu, "Metal threshold")->capture_default_str();
  c_graph->add_option("--stride", gr.stride, "Boundary subsampling stride")->capture_default_str();
  c_graph->add_option("--feature-size", gr.feature_size, "Side of the feature grid")->capture_default_str();
  c_graph->add_option("--sigma", gr.sigma, "Gaussian width of edge weights")->capture_default_str();
  c_graph->add_option("--k-ang", gr.k_ang, "Angular neighbours per node")->capture_default_str();
  c_graph->add_option("--k-rad", gr.k_rad, "Radial neighbours per node")->capture_default_str();
  c_graph->add_flag("--no-density-reweight", gr.no_reweight, "Skip density reweighting");
  add_seed(c_graph);

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the backbone (with or without GraphMoE) on a corpus");
  // CLI11 only reads config files on the top-level app, so --config lives there
  // and train falls through to it.
  app.set_config("--config", "", "train: key=value file of train options; command-line flags take precedence");
  app.config_formatter(std::make_shared<SubcommandConfig>("train"));
  c_train->fallthrough();
  c_train->footer("Options may also come from --config FILE (key = value per line, e.g. 'epochs = 20').");
  c_train->add_option("--data", tr.data, "Corpus directory")->required();
  c_train->add_option("--out", tr.out, "Run directory (log, checkpoints, evaluation)")->required();
  c_train->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  c_train->add_option("--batch", tr.cfg.batch)->capture_default_str();
  c_train->add_option("--lr", tr.cfg.lr0, "Initial learning rate")->capture_default_str();
  c_train->add_option("--halve-every", tr.cfg.halve_every, "Epochs between learning-rate halvings")
      ->capture_default_str();
  c_train->add_option("--lambda", tr.cfg.lambda, "Weight of the alignment loss")->capture_default_str();
  c_train->add_option("--alignment", tr.alignment, "mse or kl")->capture_default_str();
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch output");
  add_model_options(c_train, tr.model);
  add_seed(c_train);

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "Grouped PSNR/SSIM of a checkpoint on a corpus test split");
  c_eval->add_option("--data", ev.data, "Corpus directory")->required();
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory");
  c_eval->add_option("--out", ev.out, "Directory for evaluation.json / evaluation.txt");
  c_eval->add_flag("--identity", ev.identity, "Score the artifact input itself");
  add_seed(c_eval);

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "Run a checkpoint on one image and write an inference bundle");
  c_infer->add_option("--checkpoint", inf.checkpoint)->required();
  c_infer->add_option("--input", inf.input, "HU image (.bt)")->required();
  c_infer->add_option("--mask", inf.mask, "Metal mask (.bt); thresholded from the input when omitted");
  c_infer->add_option("--out", inf.out, "Bundle directory")->required();
  add_seed(c_infer);

  FuseArgs fu;
  auto* c_fuse = app.add_subcommand("fuse", "Blend prediction and input under the attention mask");
  c_fuse->add_option("--bundle", fu.bundle)->required();
  c_fuse->add_option("--out", fu.out, "Fused HU tensor (.bt)")->required();
  c_fuse->add_option("--png", fu.png, "Also write a windowed PNG");
  c_fuse->add_option("--threshold", fu.params.threshold, "Attention threshold t in [0,1]")
      ->check(CLI::Range(0.0f, 1.0f))
      ->capture_default_str();
  c_fuse->add_option("--tau", fu.params.tau, "Blending strength in [0,1]")
      ->check(CLI::Range(0.0f, 1.0f))
      ->capture_default_str();
  add_seed(c_fuse);

  std::string ui_bundle, ui_out;
  auto* c_ui = app.add_subcommand("export-ui", "Write the static viewer payload for a bundle");
  c_ui->add_option("--bundle", ui_bundle)->required();
  c_ui->add_option("--out", ui_out)->required();
  add_seed(c_ui);

  SelftestArgs st;
  float inject_sigma = selftest::kReferenceSigma;
  auto* c_self = app.add_subcommand("selftest", "Run the oracle, gradient and metric suites");
  c_self->add_option("--suite", st.suites, "Run only these suites")->check(CLI::IsMember(selftest::suite_names()));
  c_self->add_option("--instances", st.options.graph_instances, "Random graph instances per suite")
      ->capture_default_str();
  c_self->add_option("--grad-seeds", st.options.grad_seeds, "Seeds per gradient check")->capture_default_str();
  c_self->add_option("--inject-sigma", inject_sigma, "Test hook: kernel width given to the implementation");
  add_seed(c_self);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_sim) {
      sim.cfg.seed = seed;
      return run_simulate(sim);
    }
    if (*c_graph) return run_graph(gr);
    if (*c_train) {
      tr.cfg.seed = seed;
      return run_train(tr);
    }
    if (*c_eval) return run_evaluate(ev);
    if (*c_infer) return run_infer(inf);
    if (*c_fuse) return run_fuse(fu);
    if (*c_ui) {
      export_ui(ui_bundle, ui_out);
      std::printf("viewer payload written to %s\n", ui_out.c_str());
      return kExitOk;
    }
    if (*c_self) {
      st.options.seed = seed;
      st.options.sigma = inject_sigma;
      return run_selftest(st);
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
