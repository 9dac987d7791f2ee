#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "graphmar/fusion.hpp"
#include "graphmar/metrics.hpp"
#include "graphmar/tensor.hpp"

namespace graphmar {

class BundleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Output of `infer`: H x W tensors in HU (input, prediction) and the raw
/// attention map upsampled to H x W.
struct InferenceBundle {
  Tensor input;
  Tensor prediction;
  Tensor attention;
  std::string checkpoint_id;
  std::string created;
};

/// RFC 3339 UTC time; SOURCE_DATE_EPOCH overrides the clock when set.
std::string creation_timestamp();

/// Writes input.bt, prediction.bt, attention.bt, preview PNGs and meta.json.
void write_bundle(const std::filesystem::path& dir, const InferenceBundle& bundle);

/// Reads and shape-checks a bundle; BundleError on missing or inconsistent members.
InferenceBundle read_bundle(const std::filesystem::path& dir);

/// Y_fuse with M_A = minmax(attention) >= threshold.
Tensor fuse_bundle(const InferenceBundle& bundle, FusionParams params);

/// The PNG encoding of input and output images in the viewer payload.
inline constexpr HuWindow kExportWindow = kFullRangeWindow;

/// Writes the static viewer payload: input.png and output.png under
/// kExportWindow, attention.png min-max normalized, and meta.json.
void export_ui(const std::filesystem::path& bundle_dir, const std::filesystem::path& out_dir);

/// Checks a viewer meta.json against the published schema (docs/meta.schema.json).
/// Returns an empty string when valid, otherwise the first problem found.
std::string validate_ui_meta(const std::string& json_text);

}  // namespace graphmar
