#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "graphmar/bundle.hpp"
#include "graphmar/losses.hpp"
#include "graphmar/selftest/gradcheck.hpp"
#include "graphmar/tensor_io.hpp"

using namespace graphmar;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / ("graphmar_test_bundle_" + std::string(name));
  fs::remove_all(dir);
  return dir;
}

InferenceBundle sample_bundle(int h, int w, bool constant_attention = false) {
  InferenceBundle b;
  b.input = gradcheck::random_tensor({h, w}, 1, -1000.0f, 3000.0f);
  b.prediction = gradcheck::random_tensor({h, w}, 2, -1000.0f, 3000.0f);
  b.attention = constant_attention ? Tensor({h, w}, 0.3f) : gradcheck::random_tensor({h, w}, 3, -0.2f, 2.0f);
  b.checkpoint_id = "0123456789abcdef";
  b.created = creation_timestamp();
  return b;
}

json read_json(const fs::path& p) {
  std::ifstream is(p);
  return json::parse(is);
}

// Checks an instance against the subset of JSON Schema used by docs/meta.schema.json.
std::string schema_error(const json& schema, const json& v, const json& root, const std::string& at) {
  if (schema.contains("$ref")) {
    const std::string ref = schema["$ref"];
    REQUIRE(ref.rfind("#/$defs/", 0) == 0);
    return schema_error(root["$defs"][ref.substr(8)], v, root, at);
  }
  if (schema.contains("const") && v != schema["const"]) return at + ": const";
  if (schema.contains("enum")) {
    bool found = false;
    for (const json& e : schema["enum"]) found = found || e == v;
    if (!found) return at + ": enum";
  }
  if (schema.contains("type")) {
    const std::string t = schema["type"];
    const bool ok = (t == "object" && v.is_object()) || (t == "array" && v.is_array()) ||
                    (t == "string" && v.is_string()) || (t == "integer" && v.is_number_integer()) ||
                    (t == "number" && v.is_number());
    if (!ok) return at + ": type " + t;
  }
  if (v.is_number()) {
    if (schema.contains("minimum") && v.get<double>() < schema["minimum"].get<double>()) return at + ": minimum";
    if (schema.contains("maximum") && v.get<double>() > schema["maximum"].get<double>()) return at + ": maximum";
  }
  if (v.is_string() && schema.contains("minLength") && v.get<std::string>().size() < schema["minLength"].get<std::size_t>())
    return at + ": minLength";
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>()) return at + ": minItems";
    if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<std::size_t>()) return at + ": maxItems";
    if (schema.contains("items"))
      for (std::size_t i = 0; i < v.size(); ++i)
        if (auto e = schema_error(schema["items"], v[i], root, at + "[" + std::to_string(i) + "]"); !e.empty()) return e;
  }
  if (v.is_object()) {
    if (schema.contains("required"))
      for (const json& k : schema["required"])
        if (!v.contains(k.get<std::string>())) return at + ": missing " + k.get<std::string>();
    if (schema.contains("properties"))
      for (auto& [k, sub] : schema["properties"].items())
        if (v.contains(k))
          if (auto e = schema_error(sub, v[k], root, at + "." + k); !e.empty()) return e;
  }
  return {};
}

std::string validate_against_schema(const json& meta) {
  const json schema = read_json(GRAPHMAR_META_SCHEMA);
  return schema_error(schema, meta, schema, "$");
}

}  // namespace

TEST_CASE("bundle round trip") {
  const fs::path dir = scratch("roundtrip");
  const InferenceBundle b = sample_bundle(16, 12);
  write_bundle(dir, b);
  for (const char* f : {"meta.json", "input.bt", "prediction.bt", "attention.bt", "input.png", "prediction.png", "attention.png"})
    CHECK(fs::exists(dir / f));
  const InferenceBundle r = read_bundle(dir);
  CHECK(r.input == b.input);
  CHECK(r.prediction == b.prediction);
  CHECK(r.attention == b.attention);
  CHECK(r.checkpoint_id == b.checkpoint_id);
  CHECK_THROWS_AS(write_bundle(dir, InferenceBundle{b.input, Tensor({3, 3}), b.attention, "", ""}), std::invalid_argument);
}

TEST_CASE("broken bundles are reported") {
  const fs::path dir = scratch("broken");
  CHECK_THROWS_AS(read_bundle(dir), BundleError);
  write_bundle(dir, sample_bundle(8, 8));
  fs::remove(dir / "attention.bt");
  CHECK_THROWS_AS(read_bundle(dir), BundleError);
  save_tensor(Tensor({4, 8}), dir / "attention.bt");
  CHECK_THROWS_AS(read_bundle(dir), BundleError);
}

TEST_CASE("creation time honours SOURCE_DATE_EPOCH") {
  setenv("SOURCE_DATE_EPOCH", "86400", 1);
  CHECK(creation_timestamp() == "1970-01-02T00:00:00Z");
  unsetenv("SOURCE_DATE_EPOCH");
  CHECK(creation_timestamp().size() == 20);
}

TEST_CASE("fusing a bundle") {
  const InferenceBundle b = sample_bundle(10, 10);
  CHECK(fuse_bundle(b, {0.5f, 1.0f}) == b.prediction);
  CHECK(fuse_bundle(b, {0.0f, 0.0f}) == b.prediction);
  const Tensor f = fuse_bundle(b, {0.6f, 0.0f});
  const Tensor a = minmax_norm(b.attention);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == (a[i] >= 0.6f ? b.prediction[i] : b.input[i]));
}

TEST_CASE("viewer payload layout and schema") {
  const fs::path bundle = scratch("ui_bundle");
  const fs::path ui = scratch("ui_out");
  const InferenceBundle b = sample_bundle(20, 24);
  write_bundle(bundle, b);
  export_ui(bundle, ui);

  int files = 0;
  for (const auto& e : fs::directory_iterator(ui)) files += e.is_regular_file();
  CHECK(files == 4);
  for (const char* f : {"input.png", "output.png", "attention.png", "meta.json"}) CHECK(fs::exists(ui / f));

  const json meta = read_json(ui / "meta.json");
  CHECK(validate_ui_meta(meta.dump()) == "");
  CHECK(validate_against_schema(meta) == "");
  CHECK(meta["height"] == 20);
  CHECK(meta["width"] == 24);

  const GrayImage8 out = load_png(ui / "output.png");
  CHECK(out.pixels == window_to_u8(b.prediction, kExportWindow.lo, kExportWindow.hi).pixels);
  CHECK(load_png(ui / "attention.png").pixels == minmax_to_u8(b.attention).pixels);
}

TEST_CASE("schema and built-in validator reject the same defects") {
  const fs::path bundle = scratch("ui_bad_bundle");
  const fs::path ui = scratch("ui_bad");
  write_bundle(bundle, sample_bundle(8, 8));
  export_ui(bundle, ui);
  const json good = read_json(ui / "meta.json");

  std::vector<json> bad(7, good);
  bad[0].erase("created");
  bad[1]["format"] = "something-else";
  bad[2]["height"] = 0;
  bad[3]["files"].erase("attention");
  bad[4]["encoding"]["input"]["kind"] = "log";
  bad[5]["fusion_defaults"]["tau"] = 1.5;
  bad[6]["windows"]["soft"] = json::array({1.0});
  for (const json& m : bad) {
    CHECK(validate_ui_meta(m.dump()) != "");
    CHECK(validate_against_schema(m) != "");
  }
  CHECK(validate_ui_meta("{not json") != "");
}

TEST_CASE("constant attention exports as black") {
  const fs::path bundle = scratch("const_bundle");
  const fs::path ui = scratch("const_ui");
  write_bundle(bundle, sample_bundle(8, 8, true));
  export_ui(bundle, ui);
  for (std::uint8_t p : load_png(ui / "attention.png").pixels) CHECK(p == 0);
}

TEST_CASE("blending the exported images") {
  const fs::path bundle = scratch("blend_bundle");
  const fs::path ui = scratch("blend_ui");
  const InferenceBundle b = sample_bundle(32, 32);
  write_bundle(bundle, b);
  export_ui(bundle, ui);
  const GrayImage8 in = load_png(ui / "input.png");
  const GrayImage8 out = load_png(ui / "output.png");
  const GrayImage8 att = load_png(ui / "attention.png");

  // Viewer-side blend on the decoded 8-bit values.
  auto blend = [&](float t, float tau) {
    std::vector<std::uint8_t> px(in.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
      const bool m = att.pixels[i] / 255.0f >= t;
      const double v = m ? out.pixels[i] : tau * out.pixels[i] + (1.0 - tau) * in.pixels[i];
      px[i] = static_cast<std::uint8_t>(std::lround(v));
    }
    return px;
  };
  for (float t : {0.0f, 0.3f, 0.7f}) CHECK(blend(t, 1.0f) == out.pixels);

  // Against the primary fusion, given the attention the viewer actually receives.
  Tensor att_seen({32, 32});
  for (std::size_t i = 0; i < att_seen.size(); ++i) att_seen[i] = att.pixels[i] / 255.0f;
  int worst = 0;
  for (float t : {0.0f, 0.25f, 0.5f, 0.75f, 1.0f})
    for (float tau : {0.0f, 0.25f, 0.5f, 0.75f, 1.0f}) {
      const Tensor fused = clinical_fuse(b.input, b.prediction, att_seen, {t, tau});
      const GrayImage8 ref = window_to_u8(fused, kExportWindow.lo, kExportWindow.hi);
      const auto view = blend(t, tau);
      for (std::size_t i = 0; i < view.size(); ++i) worst = std::max(worst, std::abs(int(view[i]) - int(ref.pixels[i])));
    }
  CHECK(worst <= 1);
}
