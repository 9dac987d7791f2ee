#include "graphmar/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "graphmar/rng.hpp"
#include "graphmar/tensor_io.hpp"

namespace graphmar {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFormat = "graphmar-checkpoint";
constexpr int kCheckpointVersion = 1;

json config_to_json(const BackboneConfig& c) {
  const auto& g = c.moe.graph;
  return json{{"base_channels", c.base_channels},
              {"graphmoe_scales", c.graphmoe_scales},
              {"enable_graphmoe", c.enable_graphmoe},
              {"attention_scale", c.attention_scale},
              {"experts", c.moe.experts},
              {"max_graph_channels", c.moe.max_graph_channels},
              {"enable_graph_router", c.moe.enable_graph_router},
              {"k_angular", g.k_angular},
              {"k_radial", g.k_radial},
              {"sigma", g.sigma},
              {"enable_angular", g.enable_angular},
              {"enable_radial", g.enable_radial},
              {"enable_density_reweight", g.enable_density_reweight}};
}

BackboneConfig config_from_json(const json& j) {
  BackboneConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.graphmoe_scales = j.at("graphmoe_scales").get<std::vector<int>>();
  c.enable_graphmoe = j.at("enable_graphmoe").get<bool>();
  c.attention_scale = j.at("attention_scale").get<int>();
  c.moe.experts = j.at("experts").get<int>();
  c.moe.max_graph_channels = j.at("max_graph_channels").get<int>();
  c.moe.enable_graph_router = j.at("enable_graph_router").get<bool>();
  auto& g = c.moe.graph;
  g.k_angular = j.at("k_angular").get<int>();
  g.k_radial = j.at("k_radial").get<int>();
  g.sigma = j.at("sigma").get<float>();
  g.enable_angular = j.at("enable_angular").get<bool>();
  g.enable_radial = j.at("enable_radial").get<bool>();
  g.enable_density_reweight = j.at("enable_density_reweight").get<bool>();
  return c;
}

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

std::vector<NamedTensor> state_tensors(Network& net) {
  std::vector<NamedTensor> out;
  for (ad::Parameter* p : net.parameters()) out.push_back({p->name, &p->value});
  for (nn::BatchNorm2d* bn : net.norms()) {
    out.push_back({bn->name + ".running_mean", &bn->state.running_mean});
    out.push_back({bn->name + ".running_var", &bn->state.running_var});
  }
  return out;
}

}  // namespace

void save_checkpoint(Network& net, const fs::path& dir, const CheckpointInfo& info) {
  fs::create_directories(dir / "tensors");
  json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["seed"] = net.seed();
  j["backbone"] = config_to_json(net.config());
  j["tag"] = info.tag;
  j["epoch"] = info.epoch;
  j["validation_psnr"] = info.validation_psnr;
  j["id"] = checkpoint_id(net);
  j["tensors"] = json::array();
  for (const NamedTensor& t : state_tensors(net)) {
    const std::string file = "tensors/" + t.name + ".bt";
    save_tensor(*t.tensor, dir / file);
    j["tensors"].push_back({{"name", t.name}, {"file", file}, {"shape", t.tensor->shape()}});
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  os << j.dump(2) << '\n';
}

Network load_checkpoint(const fs::path& dir, CheckpointInfo* info) {
  const fs::path path = dir / "manifest.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    is >> j;
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw FormatError(path.string() + ": not a checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) throw FormatError(path.string() + ": unsupported version");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  Network net(config_from_json(j.at("backbone")), j.at("seed").get<std::uint64_t>());
  std::map<std::string, std::string> files;
  for (const auto& t : j.at("tensors")) files[t.at("name").get<std::string>()] = t.at("file").get<std::string>();
  for (const NamedTensor& t : state_tensors(net)) {
    auto it = files.find(t.name);
    if (it == files.end()) throw FormatError(path.string() + ": missing tensor " + t.name);
    Tensor loaded = load_tensor(dir / it->second);
    if (loaded.shape() != t.tensor->shape())
      throw FormatError("checkpoint tensor " + t.name + " has shape " + shape_to_string(loaded.shape()) +
                        ", expected " + shape_to_string(t.tensor->shape()));
    *t.tensor = std::move(loaded);
    files.erase(it);
  }
  if (!files.empty()) throw FormatError(path.string() + ": unexpected tensor " + files.begin()->first);
  for (ad::Parameter* p : net.parameters()) {
    p->grad = Tensor::zeros_like(p->value);
    p->first_moment = Tensor::zeros_like(p->value);
    p->second_moment = Tensor::zeros_like(p->value);
  }
  if (info) {
    info->tag = j.value("tag", "");
    info->epoch = j.value("epoch", 0);
    info->validation_psnr = j.value("validation_psnr", 0.0);
  }
  return net;
}

std::string checkpoint_id(Network& net) {
  std::uint64_t h = fnv1a(config_to_json(net.config()).dump());
  h ^= net.seed() * 0x9E3779B97F4A7C15ull;
  for (const NamedTensor& t : state_tensors(net)) {
    h = h * 0x100000001b3ull ^ fnv1a(t.name);
    const auto bytes = encode_tensor(*t.tensor);
    h ^= fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace graphmar
