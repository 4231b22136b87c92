#include "vsearch/onnx_backend.hpp"

#include <algorithm>
#include <climits>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <limits>
#include <unistd.h>
#include <unordered_map>
#include <unordered_set>

#include <google/protobuf/io/coded_stream.h>
#include <google/protobuf/io/zero_copy_stream_impl.h>

#include "onnx.pb.h"

namespace vsearch {

namespace fs = std::filesystem;

ModelManifest manifest_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  ModelManifest m;
  try {
    m.model_path = j.at("model_path").get<std::string>();
    if (m.model_path.is_relative()) m.model_path = base_dir / m.model_path;
    m.input_name = j.at("input_name").get<std::string>();
    m.pre_output_name = j.at("pre_output_name").get<std::string>();
    m.post_output_name = j.at("post_output_name").get<std::string>();
    m.mean = j.at("mean").get<std::array<float, 3>>();
    m.scale = j.at("scale").get<std::array<float, 3>>();
    const auto order = j.at("channel_order").get<std::string>();
    if (order == "RGB" || order == "rgb")
      m.channel_order = ChannelOrder::rgb;
    else if (order == "BGR" || order == "bgr")
      m.channel_order = ChannelOrder::bgr;
    else
      throw BackendError(fmt::format("manifest channel_order '{}' is not RGB or BGR", order));
    if (auto it = j.find("input_shape"); it != j.end()) {
      const auto s = it->get<std::vector<int>>();
      if (s.size() != 4 || s[0] != 1 || s[1] != 3)
        throw BackendError("manifest input_shape must be [1, 3, H, W]");
      m.input_height = s[2];
      m.input_width = s[3];
    }
    if (auto it = j.find("output_shape"); it != j.end()) {
      const auto s = it->get<std::vector<int>>();
      if (s.size() != 4 || s[0] != 1) throw BackendError("manifest output_shape must be [1, C, H, W]");
      m.channels = s[1];
      m.height = s[2];
      m.width = s[3];
    }
    m.weights_provenance = j.value("weights", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(fmt::format("invalid model manifest: {}", e.what()));
  }
  return m;
}

ModelManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw BackendError(fmt::format("cannot open model manifest '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw BackendError(fmt::format("model manifest '{}' is not valid JSON: {}", path.string(), e.what()));
  }
  return manifest_from_json(j, path.parent_path());
}

nlohmann::json to_json(const ModelManifest& m) {
  return {{"model_path", m.model_path.string()},
          {"input_name", m.input_name},
          {"pre_output_name", m.pre_output_name},
          {"post_output_name", m.post_output_name},
          {"channel_order", m.channel_order == ChannelOrder::rgb ? "RGB" : "BGR"},
          {"mean", m.mean},
          {"scale", m.scale},
          {"input_shape", {1, 3, m.input_height, m.input_width}},
          {"output_shape", {1, m.channels, m.height, m.width}},
          {"weights", m.weights_provenance}};
}

std::optional<ModelManifest> resolve_manifest(const std::optional<fs::path>& flag) {
  const char* env = std::getenv(kModelPathEnv);
  if (env != nullptr && *env != '\0') {
    const fs::path p(env);
    if (p.extension() == ".json") return load_manifest(p);
    fs::path manifest_path = flag ? *flag : fs::path(p).replace_extension(".json");
    if (!fs::exists(manifest_path))
      throw BackendError(fmt::format("{} names model '{}' but no manifest was found at '{}'",
                                     kModelPathEnv, p.string(), manifest_path.string()));
    auto m = load_manifest(manifest_path);
    m.model_path = p;
    return m;
  }
  if (flag) return load_manifest(*flag);
  return std::nullopt;
}

RowMatrix<float> preprocess(const Image& image, const ModelManifest& manifest) {
  if (image.width != manifest.input_width || image.height != manifest.input_height)
    throw InputError(fmt::format("image is {}x{} but the model expects {}x{}", image.width,
                                 image.height, manifest.input_width, manifest.input_height));
  const int n = image.width * image.height;
  RowMatrix<float> t(3, n);
  for (int c = 0; c < 3; ++c) {
    const int src = manifest.channel_order == ChannelOrder::rgb ? c : 2 - c;
    const float mean = manifest.mean[c];
    const float scale = manifest.scale[c];
    for (int i = 0; i < n; ++i)
      t(c, i) = (static_cast<float>(image.pixels[static_cast<std::size_t>(i) * 3 + src]) - mean) * scale;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Graph interpreter

namespace {

/// Dense float tensor of shape (C, H, W) for batch 1; weights keep their
/// full ONNX shape.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  std::int64_t dim(std::size_t i) const { return shape.at(i); }
};

Tensor from_proto(const onnx::TensorProto& t) {
  if (t.data_type() != onnx::TensorProto::FLOAT)
    throw BackendError(fmt::format("initializer '{}' has unsupported data type {}", t.name(),
                                   t.data_type()));
  if (t.data_location() == onnx::TensorProto::EXTERNAL)
    throw BackendError(fmt::format("initializer '{}' uses external data, which is not supported",
                                   t.name()));
  Tensor out;
  out.shape.assign(t.dims().begin(), t.dims().end());
  std::int64_t count = 1;
  for (auto d : out.shape) count *= d;
  out.data.resize(static_cast<std::size_t>(count));
  if (!t.raw_data().empty()) {
    if (t.raw_data().size() != out.data.size() * sizeof(float))
      throw BackendError(fmt::format("initializer '{}' raw data has wrong size", t.name()));
    std::memcpy(out.data.data(), t.raw_data().data(), t.raw_data().size());
  } else {
    if (t.float_data_size() != count)
      throw BackendError(fmt::format("initializer '{}' float data has wrong size", t.name()));
    std::copy(t.float_data().begin(), t.float_data().end(), out.data.begin());
  }
  return out;
}

struct Attrs {
  std::unordered_map<std::string, std::vector<std::int64_t>> ints;
  std::unordered_map<std::string, std::string> strings;

  std::vector<std::int64_t> get(const std::string& k, std::vector<std::int64_t> fallback) const {
    auto it = ints.find(k);
    return it == ints.end() ? fallback : it->second;
  }
};

enum class Op { conv, relu, max_pool, identity };

struct Node {
  Op op;
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  Attrs attrs;
};

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, const Attrs& attrs,
              const std::string& node) {
  if (x.shape.size() != 3 || w.shape.size() != 4)
    throw BackendError(fmt::format("Conv '{}' expects 2-D input and 4-D weights", node));
  if (attrs.get("group", {1}).at(0) != 1)
    throw BackendError(fmt::format("Conv '{}': grouped convolution is not supported", node));
  if (auto it = attrs.strings.find("auto_pad"); it != attrs.strings.end() && it->second != "NOTSET")
    throw BackendError(fmt::format("Conv '{}': auto_pad {} is not supported", node, it->second));
  const auto dil = attrs.get("dilations", {1, 1});
  if (dil[0] != 1 || dil[1] != 1)
    throw BackendError(fmt::format("Conv '{}': dilation is not supported", node));

  const auto cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const auto cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin)
    throw BackendError(fmt::format("Conv '{}': weight expects {} input channels, got {}", node,
                                   w.dim(1), cin));
  const auto pads = attrs.get("pads", {0, 0, 0, 0});
  const auto strides = attrs.get("strides", {1, 1});
  const auto ho = (h + pads[0] + pads[2] - kh) / strides[0] + 1;
  const auto wo = (wd + pads[1] + pads[3] - kw) / strides[1] + 1;
  if (ho <= 0 || wo <= 0) throw BackendError(fmt::format("Conv '{}': empty output", node));

  Tensor y;
  y.shape = {cout, ho, wo};
  y.data.resize(static_cast<std::size_t>(cout * ho * wo));

  const auto k = cin * kh * kw;
  Eigen::Map<const RowMatrix<float>> wm(w.data.data(), cout, k);
  Eigen::Map<RowMatrix<float>> ym(y.data.data(), cout, ho * wo);

  // im2col in blocks of output rows bounds the scratch buffer.
  const std::int64_t rows_per_block = std::max<std::int64_t>(1, 16384 / wo);
  RowMatrix<float> cols;
  for (std::int64_t oy0 = 0; oy0 < ho; oy0 += rows_per_block) {
    const auto oy1 = std::min(ho, oy0 + rows_per_block);
    const auto npix = (oy1 - oy0) * wo;
    cols.setZero(k, npix);
    for (std::int64_t c = 0; c < cin; ++c)
      for (std::int64_t ky = 0; ky < kh; ++ky)
        for (std::int64_t kx = 0; kx < kw; ++kx) {
          float* row = cols.row((c * kh + ky) * kw + kx).data();
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            const auto iy = oy * strides[0] - pads[0] + ky;
            if (iy < 0 || iy >= h) continue;
            const float* src = x.data.data() + (c * h + iy) * wd;
            float* dst = row + (oy - oy0) * wo;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const auto ix = ox * strides[1] - pads[1] + kx;
              if (ix >= 0 && ix < wd) dst[ox] = src[ix];
            }
          }
        }
    ym.middleCols(oy0 * wo, npix).noalias() = wm * cols;
  }
  if (bias != nullptr) {
    if (static_cast<std::int64_t>(bias->data.size()) != cout)
      throw BackendError(fmt::format("Conv '{}': bias has {} entries for {} channels", node,
                                     bias->data.size(), cout));
    ym.colwise() += Eigen::Map<const Vector<float>>(bias->data.data(), cout);
  }
  return y;
}

Tensor max_pool(const Tensor& x, const Attrs& attrs, const std::string& node) {
  if (x.shape.size() != 3) throw BackendError(fmt::format("MaxPool '{}' expects 2-D input", node));
  const auto kernel = attrs.get("kernel_shape", {});
  if (kernel.size() != 2) throw BackendError(fmt::format("MaxPool '{}' needs a 2-D kernel", node));
  const auto strides = attrs.get("strides", {1, 1});
  const auto pads = attrs.get("pads", {0, 0, 0, 0});
  const bool ceil_mode = attrs.get("ceil_mode", {0}).at(0) != 0;
  const auto dil = attrs.get("dilations", {1, 1});
  if (dil[0] != 1 || dil[1] != 1)
    throw BackendError(fmt::format("MaxPool '{}': dilation is not supported", node));

  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto out_dim = [&](std::int64_t in, std::int64_t pad, std::int64_t kern, std::int64_t stride) {
    const auto span = in + pad - kern;
    return (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
  };
  const auto ho = out_dim(h, pads[0] + pads[2], kernel[0], strides[0]);
  const auto wo = out_dim(w, pads[1] + pads[3], kernel[1], strides[1]);

  Tensor y;
  y.shape = {c, ho, wo};
  y.data.assign(static_cast<std::size_t>(c * ho * wo), -std::numeric_limits<float>::infinity());
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t oy = 0; oy < ho; ++oy)
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        float m = -std::numeric_limits<float>::infinity();
        for (std::int64_t ky = 0; ky < kernel[0]; ++ky) {
          const auto iy = oy * strides[0] - pads[0] + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel[1]; ++kx) {
            const auto ix = ox * strides[1] - pads[1] + kx;
            if (ix < 0 || ix >= w) continue;
            m = std::max(m, x.data[static_cast<std::size_t>((ch * h + iy) * w + ix)]);
          }
        }
        y.data[static_cast<std::size_t>((ch * ho + oy) * wo + ox)] = m;
      }
  return y;
}

}  // namespace

struct OnnxBackend::Graph {
  std::unordered_map<std::string, Tensor> initializers;
  std::vector<Node> nodes;  // only those needed for the taps, in graph order
  std::string source;
};

namespace {

std::vector<std::int64_t> declared_shape(const onnx::ValueInfoProto& v) {
  std::vector<std::int64_t> shape;
  if (!v.type().has_tensor_type() || !v.type().tensor_type().has_shape()) return shape;
  for (const auto& d : v.type().tensor_type().shape().dim())
    shape.push_back(d.has_dim_value() ? d.dim_value() : -1);
  return shape;
}

void check_declared(const onnx::GraphProto& g, const std::string& name,
                    const std::vector<std::int64_t>& expected, bool is_input) {
  const auto& list = is_input ? g.input() : g.output();
  for (const auto& v : list) {
    if (v.name() != name) continue;
    const auto shape = declared_shape(v);
    if (shape.empty()) return;
    bool ok = shape.size() == expected.size();
    for (std::size_t i = 0; ok && i < shape.size(); ++i)
      ok = shape[i] < 0 || shape[i] == expected[i];
    if (!ok)
      throw BackendError(fmt::format("model declares {} '{}' with shape [{}], manifest expects [{}]",
                                     is_input ? "input" : "output", name, fmt::join(shape, ","),
                                     fmt::join(expected, ",")));
    return;
  }
  throw BackendError(fmt::format("model has no {} named '{}'", is_input ? "input" : "output", name));
}

}  // namespace

OnnxBackend::OnnxBackend(ModelManifest manifest)
    : manifest_(std::move(manifest)), graph_(std::make_unique<Graph>()) {
  const auto& path = manifest_.model_path;
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw BackendError(fmt::format("model file '{}' not found", path.string()));
  onnx::ModelProto model;
  bool parsed = false;
  {
    google::protobuf::io::FileInputStream raw(fd);
    google::protobuf::io::CodedInputStream coded(&raw);
    coded.SetTotalBytesLimit(INT_MAX, INT_MAX);
    parsed = model.ParseFromCodedStream(&coded) && coded.ConsumedEntireMessage();
  }
  ::close(fd);
  if (!parsed) throw BackendError(fmt::format("model file '{}' is not a valid ONNX model", path.string()));

  const auto& g = model.graph();
  check_declared(g, manifest_.input_name, {1, 3, manifest_.input_height, manifest_.input_width}, true);
  const std::vector<std::int64_t> out_shape{1, manifest_.channels, manifest_.height, manifest_.width};
  check_declared(g, manifest_.pre_output_name, out_shape, false);
  check_declared(g, manifest_.post_output_name, out_shape, false);

  // Walk back from the taps to find the nodes that matter.
  std::unordered_map<std::string, int> producer;
  for (int i = 0; i < g.node_size(); ++i)
    for (const auto& o : g.node(i).output()) producer[o] = i;
  std::vector<bool> needed(static_cast<std::size_t>(g.node_size()), false);
  std::vector<std::string> stack{manifest_.pre_output_name, manifest_.post_output_name};
  std::unordered_set<std::string> seen;
  while (!stack.empty()) {
    auto name = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(name).second) continue;
    auto it = producer.find(name);
    if (it == producer.end()) continue;
    needed[static_cast<std::size_t>(it->second)] = true;
    for (const auto& in : g.node(it->second).input()) stack.push_back(in);
  }

  std::unordered_set<std::string> initializer_names;
  for (const auto& t : g.initializer()) initializer_names.insert(t.name());

  for (int i = 0; i < g.node_size(); ++i) {
    if (!needed[static_cast<std::size_t>(i)]) continue;
    const auto& n = g.node(i);
    Node node;
    node.name = n.name().empty() ? n.output(0) : n.name();
    if (n.op_type() == "Conv")
      node.op = Op::conv;
    else if (n.op_type() == "Relu")
      node.op = Op::relu;
    else if (n.op_type() == "MaxPool")
      node.op = Op::max_pool;
    else if (n.op_type() == "Identity" || n.op_type() == "Dropout")
      node.op = Op::identity;
    else
      throw BackendError(fmt::format("node '{}' uses unsupported operator {}", node.name, n.op_type()));
    node.inputs.assign(n.input().begin(), n.input().end());
    node.outputs.assign(n.output().begin(), n.output().end());
    for (const auto& a : n.attribute()) {
      if (a.type() == onnx::AttributeProto::INT)
        node.attrs.ints[a.name()] = {a.i()};
      else if (a.type() == onnx::AttributeProto::INTS)
        node.attrs.ints[a.name()].assign(a.ints().begin(), a.ints().end());
      else if (a.type() == onnx::AttributeProto::STRING)
        node.attrs.strings[a.name()] = a.s();
    }
    graph_->nodes.push_back(std::move(node));
  }
  for (const auto& t : g.initializer())
    if (seen.count(t.name())) graph_->initializers.emplace(t.name(), from_proto(t));
  graph_->source = path.stem().string();
}

OnnxBackend::~OnnxBackend() = default;
OnnxBackend::OnnxBackend(OnnxBackend&&) noexcept = default;
OnnxBackend& OnnxBackend::operator=(OnnxBackend&&) noexcept = default;

std::string OnnxBackend::id() const { return "onnx:" + graph_->source; }

FeatureStack OnnxBackend::extract(const Image& image) const {
  const auto input = preprocess(image, manifest_);

  std::unordered_map<std::string, Tensor> values;
  {
    Tensor x;
    x.shape = {3, manifest_.input_height, manifest_.input_width};
    x.data.assign(input.data(), input.data() + input.size());
    values.emplace(manifest_.input_name, std::move(x));
  }
  auto lookup = [&](const std::string& name) -> const Tensor& {
    if (auto it = values.find(name); it != values.end()) return it->second;
    if (auto it = graph_->initializers.find(name); it != graph_->initializers.end()) return it->second;
    throw BackendError(fmt::format("tensor '{}' is not available", name));
  };

  for (const auto& node : graph_->nodes) {
    Tensor out;
    switch (node.op) {
      case Op::conv: {
        const Tensor* bias = node.inputs.size() > 2 && !node.inputs[2].empty() ? &lookup(node.inputs[2]) : nullptr;
        out = conv2d(lookup(node.inputs.at(0)), lookup(node.inputs.at(1)), bias, node.attrs, node.name);
        break;
      }
      case Op::relu:
        out = lookup(node.inputs.at(0));
        for (auto& v : out.data) v = std::max(v, 0.0f);
        break;
      case Op::max_pool:
        out = max_pool(lookup(node.inputs.at(0)), node.attrs, node.name);
        break;
      case Op::identity:
        out = lookup(node.inputs.at(0));
        break;
    }
    values[node.outputs.at(0)] = std::move(out);
  }

  const Tensor& pre = lookup(manifest_.pre_output_name);
  const Tensor& post = lookup(manifest_.post_output_name);
  const std::vector<std::int64_t> want{manifest_.channels, manifest_.height, manifest_.width};
  for (const Tensor* t : {&pre, &post})
    if (t->shape != want)
      throw BackendError(fmt::format("model produced shape [1,{}], manifest expects [1,{}]",
                                     fmt::join(t->shape, ","), fmt::join(want, ",")));

  FeatureStack stack(manifest_.channels, manifest_.height, manifest_.width);
  const auto cells = manifest_.height * manifest_.width;
  stack.pre = Eigen::Map<const RowMatrix<float>>(pre.data.data(), manifest_.channels, cells);
  stack.post = Eigen::Map<const RowMatrix<float>>(post.data.data(), manifest_.channels, cells);
  if (!stack.all_finite())
    throw IntegrityError(fmt::format("backend {} produced non-finite activations", id()));
  return stack;
}

}  // namespace vsearch
