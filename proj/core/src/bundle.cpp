#include "graphmar/bundle.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "graphmar/losses.hpp"
#include "graphmar/tensor_io.hpp"

namespace graphmar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kBundleFormat = "graphmar-bundle";
constexpr const char* kUiFormat = "graphmar-ui";
constexpr int kVersion = 1;

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw BundleError("missing " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw BundleError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

json windows_json() {
  return json{{"full", {kFullRangeWindow.lo, kFullRangeWindow.hi}},
              {"soft", {kSoftTissueWindow.lo, kSoftTissueWindow.hi}}};
}

Tensor load_member(const fs::path& dir, const json& files, const char* key) {
  if (!files.contains(key)) throw BundleError("bundle meta.json lacks files." + std::string(key));
  const fs::path p = dir / files.at(key).get<std::string>();
  if (!fs::exists(p)) throw BundleError("bundle member missing: " + p.string());
  try {
    return load_tensor(p);
  } catch (const std::exception& e) {
    throw BundleError(p.string() + ": " + e.what());
  }
}

}  // namespace

std::string creation_timestamp() {
  std::time_t t;
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_bundle(const fs::path& dir, const InferenceBundle& b) {
  if (b.input.rank() != 2 || b.prediction.shape() != b.input.shape() || b.attention.shape() != b.input.shape())
    throw std::invalid_argument("bundle tensors must be 2-D and share one shape");
  fs::create_directories(dir);
  save_tensor(b.input, dir / "input.bt");
  save_tensor(b.prediction, dir / "prediction.bt");
  save_tensor(b.attention, dir / "attention.bt");
  save_png_gray(b.input, dir / "input.png", kExportWindow.lo, kExportWindow.hi);
  save_png_gray(b.prediction, dir / "prediction.png", kExportWindow.lo, kExportWindow.hi);
  save_png(minmax_to_u8(b.attention), dir / "attention.png");
  json j;
  j["format"] = kBundleFormat;
  j["version"] = kVersion;
  j["height"] = b.input.dim(0);
  j["width"] = b.input.dim(1);
  j["checkpoint_id"] = b.checkpoint_id;
  j["created"] = b.created;
  j["windows"] = windows_json();
  j["files"] = {{"input", "input.bt"}, {"prediction", "prediction.bt"}, {"attention", "attention.bt"}};
  j["previews"] = {{"input", "input.png"}, {"prediction", "prediction.png"}, {"attention", "attention.png"}};
  write_json(dir / "meta.json", j);
}

InferenceBundle read_bundle(const fs::path& dir) {
  const json j = read_json(dir / "meta.json");
  try {
    if (j.at("format").get<std::string>() != kBundleFormat) throw BundleError(dir.string() + " is not a bundle");
    InferenceBundle b;
    const json& files = j.at("files");
    b.input = load_member(dir, files, "input");
    b.prediction = load_member(dir, files, "prediction");
    b.attention = load_member(dir, files, "attention");
    b.checkpoint_id = j.value("checkpoint_id", "");
    b.created = j.value("created", "");
    const Shape expected{j.at("height").get<int>(), j.at("width").get<int>()};
    for (const Tensor* t : {&b.input, &b.prediction, &b.attention})
      if (t->shape() != expected)
        throw BundleError("bundle member shape " + shape_to_string(t->shape()) + " does not match meta.json " +
                          shape_to_string(expected));
    return b;
  } catch (const json::exception& e) {
    throw BundleError((dir / "meta.json").string() + ": " + e.what());
  }
}

Tensor fuse_bundle(const InferenceBundle& b, FusionParams params) {
  return clinical_fuse(b.input, b.prediction, minmax_norm(b.attention), params);
}

void export_ui(const fs::path& bundle_dir, const fs::path& out_dir) {
  const InferenceBundle b = read_bundle(bundle_dir);
  fs::create_directories(out_dir);
  save_png_gray(b.input, out_dir / "input.png", kExportWindow.lo, kExportWindow.hi);
  save_png_gray(b.prediction, out_dir / "output.png", kExportWindow.lo, kExportWindow.hi);
  save_png(minmax_to_u8(b.attention), out_dir / "attention.png");

  json j;
  j["format"] = kUiFormat;
  j["version"] = kVersion;
  j["height"] = b.input.dim(0);
  j["width"] = b.input.dim(1);
  j["files"] = {{"input", "input.png"}, {"output", "output.png"}, {"attention", "attention.png"}};
  j["encoding"] = {{"input", {{"kind", "window"}, {"lo", kExportWindow.lo}, {"hi", kExportWindow.hi}}},
                   {"output", {{"kind", "window"}, {"lo", kExportWindow.lo}, {"hi", kExportWindow.hi}}},
                   {"attention",
                    {{"kind", "minmax"}, {"lo", b.attention.min()}, {"hi", b.attention.max()}}}};
  j["windows"] = windows_json();
  j["fusion_defaults"] = {{"threshold", 0.5}, {"tau", 1.0}};
  j["checkpoint_id"] = b.checkpoint_id;
  j["created"] = b.created;
  write_json(out_dir / "meta.json", j);
}

std::string validate_ui_meta(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    return std::string("not JSON: ") + e.what();
  }
  auto require = [&](const json& obj, const char* key, auto check, const char* what) -> std::string {
    if (!obj.is_object() || !obj.contains(key)) return std::string("missing ") + key;
    if (!check(obj.at(key))) return std::string(key) + " must be " + what;
    return {};
  };
  auto is_string = [](const json& v) { return v.is_string() && !v.get<std::string>().empty(); };
  auto is_positive = [](const json& v) { return v.is_number_integer() && v.get<long long>() > 0; };
  auto is_object = [](const json& v) { return v.is_object(); };
  auto is_pair = [](const json& v) {
    return v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number() && v[0].get<double>() < v[1].get<double>();
  };
  auto is_unit = [](const json& v) { return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0; };

  for (auto [key, err] : {std::pair{"format", require(j, "format", [](const json& v) { return v == kUiFormat; },
                                                      "\"graphmar-ui\"")},
                          std::pair{"version", require(j, "version", [](const json& v) { return v == kVersion; }, "1")},
                          std::pair{"height", require(j, "height", is_positive, "a positive integer")},
                          std::pair{"width", require(j, "width", is_positive, "a positive integer")},
                          std::pair{"files", require(j, "files", is_object, "an object")},
                          std::pair{"encoding", require(j, "encoding", is_object, "an object")},
                          std::pair{"windows", require(j, "windows", is_object, "an object")},
                          std::pair{"fusion_defaults", require(j, "fusion_defaults", is_object, "an object")},
                          std::pair{"checkpoint_id", require(j, "checkpoint_id", [](const json& v) { return v.is_string(); },
                                                             "a string")},
                          std::pair{"created", require(j, "created", is_string, "a non-empty string")}}) {
    (void)key;
    if (!err.empty()) return err;
  }
  for (const char* f : {"input", "output", "attention"}) {
    if (auto e = require(j["files"], f, is_string, "a file name"); !e.empty()) return "files: " + e;
    if (auto e = require(j["encoding"], f, is_object, "an object"); !e.empty()) return "encoding: " + e;
    const json& enc = j["encoding"][f];
    if (!enc.contains("kind") || !enc["kind"].is_string()) return std::string("encoding.") + f + ".kind missing";
    const std::string kind = enc["kind"].get<std::string>();
    if (kind != "window" && kind != "minmax") return std::string("encoding.") + f + ".kind must be window or minmax";
    if (!enc.contains("lo") || !enc.contains("hi") || !enc["lo"].is_number() || !enc["hi"].is_number())
      return std::string("encoding.") + f + " needs numeric lo and hi";
    if (kind == "window" && !(enc["lo"].get<double>() < enc["hi"].get<double>()))
      return std::string("encoding.") + f + ": lo must be below hi";
  }
  for (const char* w : {"full", "soft"})
    if (auto e = require(j["windows"], w, is_pair, "an increasing [lo, hi] pair"); !e.empty()) return "windows: " + e;
  for (const char* k : {"threshold", "tau"})
    if (auto e = require(j["fusion_defaults"], k, is_unit, "in [0, 1]"); !e.empty()) return "fusion_defaults: " + e;
  return {};
}

}  // namespace graphmar
