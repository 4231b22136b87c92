#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "vsearch/backend.hpp"

namespace vsearch {

enum class ChannelOrder { rgb, bgr };

/// Sidecar describing how to feed the exported network and which outputs
/// carry the two taps.
///
/// mean and scale are indexed in the network's input channel order; each
/// input plane is (pixel - mean[c]) * scale[c] after reordering.
struct ModelManifest {
  std::filesystem::path model_path;
  std::string input_name = "input";
  std::string pre_output_name = "pre";
  std::string post_output_name = "post";
  ChannelOrder channel_order = ChannelOrder::rgb;
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> scale{1.0f, 1.0f, 1.0f};
  int input_height = 224;
  int input_width = 224;
  int channels = 512;
  int height = 14;
  int width = 14;
  std::string weights_provenance;
};

/// Parses the manifest JSON. Relative model paths resolve against the
/// manifest's directory.
ModelManifest load_manifest(const std::filesystem::path& path);
ModelManifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const ModelManifest& m);

/// Where the model comes from. VSEARCH_MODEL_PATH, when set, wins over the
/// flag: a value ending in ".json" names a manifest; anything else names
/// the model file and the manifest is the flag's, or else the sidecar
/// "<model stem>.json" next to the model.
std::optional<ModelManifest> resolve_manifest(const std::optional<std::filesystem::path>& flag);

inline constexpr const char* kModelPathEnv = "VSEARCH_MODEL_PATH";

/// 1 x 3 x H x W input tensor, stored as a 3 x (H*W) row-major matrix.
RowMatrix<float> preprocess(const Image& image, const ModelManifest& manifest);

/// CNN feature backend evaluating an ONNX graph on the CPU.
///
/// Supports the operator subset of a VGG-style trunk (Conv, Relu,
/// MaxPool, Identity) with batch size 1. Only nodes upstream of the two
/// tapped outputs are evaluated.
class OnnxBackend final : public FeatureBackend {
 public:
  explicit OnnxBackend(ModelManifest manifest);
  ~OnnxBackend() override;
  OnnxBackend(OnnxBackend&&) noexcept;
  OnnxBackend& operator=(OnnxBackend&&) noexcept;

  FeatureStack extract(const Image& image) const override;
  std::string id() const override;
  int channels() const override { return manifest_.channels; }
  const ModelManifest& manifest() const { return manifest_; }

 private:
  struct Graph;
  ModelManifest manifest_;
  std::unique_ptr<Graph> graph_;
};

}  // namespace vsearch
