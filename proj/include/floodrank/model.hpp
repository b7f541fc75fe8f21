#pragma once

// Image -> scalar depth regressor: an exchangeable backbone followed by a single
// linear output unit. Predictions are in centimetres.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "floodrank/errors.hpp"
#include "floodrank/image.hpp"
#include "floodrank/level_scale.hpp"
#include "floodrank/nn/layers.hpp"
#include "floodrank/nn/tensor.hpp"

namespace floodrank {

enum class Backbone { pretrained_conv, tiny_conv, mlp_on_features };

inline std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::pretrained_conv: return "pretrained_conv";
    case Backbone::tiny_conv: return "tiny_conv";
    case Backbone::mlp_on_features: return "mlp_on_features";
  }
  return "tiny_conv";
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "pretrained_conv") return Backbone::pretrained_conv;
  if (s == "tiny_conv") return Backbone::tiny_conv;
  if (s == "mlp_on_features") return Backbone::mlp_on_features;
  throw ConfigError("unknown backbone '" + s + "'");
}

struct ModelConfig {
  Backbone backbone = Backbone::tiny_conv;
  int input_height = 512;
  int input_width = 512;
  int input_channels = 3;
  // The head computes output_scale * (w.f + b), so unit-scale weights span the cm range.
  double output_scale = 100.0;
  int tiny_width = 8;              // tiny_conv base channel count
  double vgg_width = 1.0 / 8.0;    // pretrained_conv channel multiplier on VGG16 widths
  int mlp_hidden = 32;             // mlp_on_features hidden units
  std::optional<std::string> backbone_weights;  // checkpoint providing backbone.* tensors
  bool freeze_backbone = false;
  std::uint64_t init_seed = 0;

  void validate() const {
    if (input_height <= 0 || input_width <= 0 || input_channels <= 0)
      throw ConfigError("input size must be positive");
    if (!(output_scale > 0.0)) throw ConfigError("output_scale must be positive");
    if (tiny_width <= 0 || mlp_hidden <= 0 || !(vgg_width > 0.0))
      throw ConfigError("layer widths must be positive");
    const int min_side = backbone == Backbone::pretrained_conv ? 32
                         : backbone == Backbone::tiny_conv    ? 8
                                                              : 1;
    if (input_height < min_side || input_width < min_side)
      throw ConfigError(to_string(backbone) + " needs inputs of at least " +
                        std::to_string(min_side) + " pixels per side");
  }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["backbone"] = to_string(c.backbone);
  j["input_size"] = {c.input_height, c.input_width, c.input_channels};
  j["output_scale"] = c.output_scale;
  j["tiny_width"] = c.tiny_width;
  j["vgg_width"] = c.vgg_width;
  j["mlp_hidden"] = c.mlp_hidden;
  j["backbone_weights"] = c.backbone_weights ? nlohmann::ordered_json(*c.backbone_weights) : nullptr;
  j["freeze_backbone"] = c.freeze_backbone;
  j["init_seed"] = c.init_seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "backbone",   "input_size",       "output_scale",    "tiny_width", "vgg_width",
      "mlp_hidden", "backbone_weights", "freeze_backbone", "init_seed"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown model config field '" + k + "'");
  ModelConfig c;
  if (j.contains("backbone")) c.backbone = parse_backbone(j["backbone"].get<std::string>());
  if (j.contains("input_size")) {
    const auto& s = j["input_size"];
    if (!s.is_array() || s.size() != 3) throw ConfigError("input_size must be [H, W, C]");
    c.input_height = s[0].get<int>();
    c.input_width = s[1].get<int>();
    c.input_channels = s[2].get<int>();
  }
  c.output_scale = j.value("output_scale", c.output_scale);
  c.tiny_width = j.value("tiny_width", c.tiny_width);
  c.vgg_width = j.value("vgg_width", c.vgg_width);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  if (j.contains("backbone_weights") && !j["backbone_weights"].is_null())
    c.backbone_weights = j["backbone_weights"].get<std::string>();
  c.freeze_backbone = j.value("freeze_backbone", c.freeze_backbone);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.validate();
  return c;
}

template <typename Scalar>
class Model;

template <typename Scalar>
void load_backbone_weights(Model<Scalar>& model, const std::filesystem::path& path);

template <typename Scalar>
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.init_seed);
    std::size_t features = 0;
    switch (cfg_.backbone) {
      case Backbone::tiny_conv: features = build_tiny(rng); break;
      case Backbone::pretrained_conv: features = build_vgg(rng); break;
      case Backbone::mlp_on_features: features = build_mlp(rng); break;
    }
    head_ = std::make_unique<nn::Linear<Scalar>>(features, 1, "head");
    head_->init_normal(rng, 0.01);
    if (cfg_.backbone == Backbone::pretrained_conv && cfg_.backbone_weights)
      load_backbone_weights(*this, *cfg_.backbone_weights);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }

  // Raw (unclamped) predictions in cm for a (B, C, H, W) batch. Caches activations
  // for a subsequent backward().
  std::vector<double> forward(const nn::Tensor<Scalar>& batch) {
    check_shape(batch);
    backbone_.forward(batch, features_);
    head_->forward(features_, head_out_);
    std::vector<double> out(batch.n());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = cfg_.output_scale * static_cast<double>(head_out_.data()[i]);
    return out;
  }

  // Accumulates parameter gradients for d loss / d prediction (one entry per sample
  // of the last forward batch).
  void backward(std::span<const double> grad_pred) {
    if (grad_pred.size() != head_out_.n()) throw DomainError("gradient size mismatch");
    nn::Tensor<Scalar> g(grad_pred.size(), 1, 1, 1), g_feat, g_in;
    for (std::size_t i = 0; i < grad_pred.size(); ++i)
      g.data()[i] = static_cast<Scalar>(cfg_.output_scale * grad_pred[i]);
    head_->backward(g, g_feat);
    if (!cfg_.freeze_backbone) backbone_.backward(g_feat, g_in);
  }

  // Parameters updated by the optimiser.
  std::vector<nn::Parameter<Scalar>*> trainable_parameters() {
    std::vector<nn::Parameter<Scalar>*> ps;
    if (!cfg_.freeze_backbone) ps = backbone_.parameters();
    for (auto* p : head_->parameters()) ps.push_back(p);
    return ps;
  }

  std::vector<nn::Parameter<Scalar>*> all_parameters() {
    auto ps = backbone_.parameters();
    for (auto* p : head_->parameters()) ps.push_back(p);
    return ps;
  }

  std::vector<nn::Parameter<Scalar>*> backbone_parameters() { return backbone_.parameters(); }
  nn::Linear<Scalar>& head() { return *head_; }

  void zero_grad() {
    for (auto* p : all_parameters()) p->zero_grad();
  }

  void check_shape(const nn::Tensor<Scalar>& batch) const {
    if (batch.n() == 0 || batch.c() != std::size_t(cfg_.input_channels) ||
        batch.h() != std::size_t(cfg_.input_height) || batch.w() != std::size_t(cfg_.input_width))
      throw DomainError("input batch shape (" + std::to_string(batch.n()) + ", " +
                        std::to_string(batch.c()) + ", " + std::to_string(batch.h()) + ", " +
                        std::to_string(batch.w()) + ") does not match model input (" +
                        std::to_string(cfg_.input_channels) + ", " +
                        std::to_string(cfg_.input_height) + ", " +
                        std::to_string(cfg_.input_width) + ")");
  }

 private:
  std::size_t build_tiny(std::mt19937_64& rng) {
    const std::size_t w = cfg_.tiny_width;
    const std::size_t widths[4] = {w, 2 * w, 2 * w, 2 * w};
    std::size_t in = cfg_.input_channels;
    for (int b = 0; b < 4; ++b) {
      auto& conv = backbone_.template add<nn::Conv2d<Scalar>>(in, widths[b], 3,
                                                              "backbone.conv" + std::to_string(b + 1));
      conv.init_he(rng);
      conv.set_propagate_input_grad(b > 0);
      backbone_.template add<nn::Relu<Scalar>>();
      if (b < 3) backbone_.template add<nn::MaxPool2<Scalar>>();
      in = widths[b];
    }
    backbone_.template add<nn::GlobalAvgPool<Scalar>>();
    return in;
  }

  // VGG16 layer layout with channel widths scaled by vgg_width.
  std::size_t build_vgg(std::mt19937_64& rng) {
    const int layout[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
    std::size_t in = cfg_.input_channels;
    int idx = 0;
    for (int v : layout) {
      if (v == 0) {
        backbone_.template add<nn::MaxPool2<Scalar>>();
        continue;
      }
      const auto out = std::max<std::size_t>(1, std::size_t(std::lround(v * cfg_.vgg_width)));
      auto& conv = backbone_.template add<nn::Conv2d<Scalar>>(in, out, 3,
                                                              "backbone.conv" + std::to_string(++idx));
      conv.init_he(rng);
      conv.set_propagate_input_grad(idx > 1);
      backbone_.template add<nn::Relu<Scalar>>();
      in = out;
    }
    backbone_.template add<nn::GlobalAvgPool<Scalar>>();
    return in;
  }

  std::size_t build_mlp(std::mt19937_64& rng) {
    backbone_.template add<nn::RowProfile<Scalar>>();
    const std::size_t in = std::size_t(cfg_.input_channels) * cfg_.input_height;
    backbone_.template add<nn::Linear<Scalar>>(in, cfg_.mlp_hidden, "backbone.fc1").init_he(rng);
    backbone_.template add<nn::Relu<Scalar>>();
    return cfg_.mlp_hidden;
  }

  ModelConfig cfg_;
  nn::Sequential<Scalar> backbone_;
  std::unique_ptr<nn::Linear<Scalar>> head_;
  nn::Tensor<Scalar> features_, head_out_;
};

template <typename Scalar>
std::unique_ptr<Model<Scalar>> build_model(const ModelConfig& cfg) {
  return std::make_unique<Model<Scalar>>(cfg);
}

// Resizes to the model input and converts HWC [0,1] pixels into one CHW sample.
template <typename Scalar>
void image_to_sample(const Image& img, const ModelConfig& cfg, nn::Tensor<Scalar>& batch,
                     std::size_t index) {
  if (img.channels != cfg.input_channels)
    throw DomainError("image has " + std::to_string(img.channels) + " channels, model expects " +
                      std::to_string(cfg.input_channels));
  const Image& src = (img.width == cfg.input_width && img.height == cfg.input_height)
                         ? img
                         : resize_bilinear(img, cfg.input_width, cfg.input_height);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.height; ++y)
      for (int x = 0; x < src.width; ++x)
        batch(index, c, y, x) = static_cast<Scalar>(src.at(y, x, c));
}

// Packed, model-ready pixels for many images (one CHW block per image).
template <typename Scalar>
struct ImageBank {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<Scalar> pixels;

  std::size_t size() const { return c * h * w == 0 ? 0 : pixels.size() / (c * h * w); }

  void append(const Image& img, const ModelConfig& cfg) {
    c = cfg.input_channels;
    h = cfg.input_height;
    w = cfg.input_width;
    nn::Tensor<Scalar> one(1, c, h, w);
    image_to_sample(img, cfg, one, 0);
    pixels.insert(pixels.end(), one.values().begin(), one.values().end());
  }

  void gather(std::span<const std::size_t> indices, nn::Tensor<Scalar>& batch) const {
    batch.resize(indices.size(), c, h, w);
    const std::size_t block = c * h * w;
    for (std::size_t i = 0; i < indices.size(); ++i)
      std::copy_n(pixels.begin() + indices[i] * block, block, batch.data() + i * block);
  }
};

// Inference: clamped depth per sample of a prepared batch.
template <typename Scalar>
std::vector<DepthCm> predict(Model<Scalar>& model, const nn::Tensor<Scalar>& batch) {
  std::vector<DepthCm> out;
  for (double y : model.forward(batch)) out.push_back(clamp_depth(y));
  return out;
}

template <typename Scalar>
DepthCm predict(Model<Scalar>& model, const Image& image) {
  const auto& cfg = model.config();
  nn::Tensor<Scalar> batch(1, cfg.input_channels, cfg.input_height, cfg.input_width);
  image_to_sample(image, cfg, batch, 0);
  return predict(model, batch).front();
}

// Checkpoint: a JSON document holding the config echo, every parameter tensor and
// free-form training metadata (epoch, seed, lambda, ...).
template <typename Scalar>
nlohmann::ordered_json checkpoint_json(Model<Scalar>& model, const nlohmann::ordered_json& metadata) {
  nlohmann::ordered_json j;
  j["format"] = "floodrank-checkpoint";
  j["version"] = 1;
  j["config"] = to_json(model.config());
  j["metadata"] = metadata;
  auto& params = j["parameters"] = nlohmann::ordered_json::array();
  for (auto* p : model.all_parameters()) {
    nlohmann::ordered_json pj;
    pj["name"] = p->name;
    pj["shape"] = p->shape;
    std::vector<double> vals(p->value.begin(), p->value.end());
    pj["values"] = vals;
    params.push_back(std::move(pj));
  }
  return j;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, Model<Scalar>& model,
                     const nlohmann::ordered_json& metadata = nlohmann::ordered_json::object()) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << checkpoint_json(model, metadata).dump();
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

inline nlohmann::json read_checkpoint_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", std::string{}) != "floodrank-checkpoint")
    throw ParseError(path.string() + " is not a floodrank checkpoint");
  return j;
}

// Copies tensors whose names pass `filter` from checkpoint json into the model.
template <typename Scalar, typename Filter>
std::size_t assign_parameters(Model<Scalar>& model, const nlohmann::json& ckpt, Filter filter) {
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& pj : ckpt.at("parameters")) by_name[pj.at("name").get<std::string>()] = &pj;
  std::size_t assigned = 0;
  for (auto* p : model.all_parameters()) {
    if (!filter(p->name)) continue;
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ParseError("checkpoint lacks parameter " + p->name);
    const auto shape = it->second->at("shape").template get<std::vector<std::size_t>>();
    if (shape != p->shape) throw ParseError("shape mismatch for parameter " + p->name);
    const auto vals = it->second->at("values").template get<std::vector<double>>();
    if (vals.size() != p->value.size()) throw ParseError("size mismatch for parameter " + p->name);
    for (std::size_t i = 0; i < vals.size(); ++i) p->value[i] = static_cast<Scalar>(vals[i]);
    ++assigned;
  }
  return assigned;
}

template <typename Scalar>
void load_backbone_weights(Model<Scalar>& model, const std::filesystem::path& path) {
  const auto j = read_checkpoint_json(path);
  assign_parameters(model, j, [](const std::string& n) { return n.rfind("backbone.", 0) == 0; });
}

template <typename Scalar>
struct LoadedCheckpoint {
  std::unique_ptr<Model<Scalar>> model;
  nlohmann::json metadata;
};

template <typename Scalar>
LoadedCheckpoint<Scalar> load_checkpoint(const std::filesystem::path& path) {
  const auto j = read_checkpoint_json(path);
  auto cfg = model_config_from_json(j.at("config"));
  cfg.backbone_weights.reset();  // tensors come from this file
  LoadedCheckpoint<Scalar> out{build_model<Scalar>(cfg), j.value("metadata", nlohmann::json::object())};
  assign_parameters(*out.model, j, [](const std::string&) { return true; });
  return out;
}

}  // namespace floodrank
