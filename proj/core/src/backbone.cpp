#include "streetcam/backbone.hpp"

#include <cmath>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace nn = torch::nn;

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::conv_residual: return "conv_residual";
    case BackboneKind::attention_transformer: return "attention_transformer";
    case BackboneKind::tiny_conv: return "tiny_conv";
  }
  return "unknown";
}

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "conv_residual") return BackboneKind::conv_residual;
  if (name == "attention_transformer") return BackboneKind::attention_transformer;
  if (name == "tiny_conv") return BackboneKind::tiny_conv;
  throw ValidationError("unknown backbone '" + name +
                        "' (expected conv_residual, attention_transformer or tiny_conv)");
}

void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"kind", to_string(c.kind)}, {"input_side", c.input_side}};
  switch (c.kind) {
    case BackboneKind::tiny_conv:
      j["tiny_conv"] = {{"hidden_channels", c.tiny.hidden_channels},
                        {"feature_channels", c.tiny.feature_channels},
                        {"kernel", c.tiny.kernel}};
      break;
    case BackboneKind::conv_residual:
      j["conv_residual"] = {{"depth", c.residual.depth}};
      break;
    case BackboneKind::attention_transformer:
      j["attention_transformer"] = {{"patch", c.transformer.patch},
                                    {"dim", c.transformer.dim},
                                    {"depth", c.transformer.depth},
                                    {"heads", c.transformer.heads},
                                    {"mlp_ratio", c.transformer.mlp_ratio}};
      break;
  }
}

void from_json(const nlohmann::json& j, BackboneConfig& c) {
  c = BackboneConfig{};
  c.kind = parse_backbone_kind(j.at("kind").get<std::string>());
  c.input_side = j.at("input_side").get<int>();
  if (auto it = j.find("tiny_conv"); it != j.end()) {
    c.tiny.hidden_channels = it->at("hidden_channels");
    c.tiny.feature_channels = it->at("feature_channels");
    c.tiny.kernel = it->at("kernel");
  }
  if (auto it = j.find("conv_residual"); it != j.end()) c.residual.depth = it->at("depth");
  if (auto it = j.find("attention_transformer"); it != j.end()) {
    c.transformer.patch = it->at("patch");
    c.transformer.dim = it->at("dim");
    c.transformer.depth = it->at("depth");
    c.transformer.heads = it->at("heads");
    c.transformer.mlp_ratio = it->at("mlp_ratio");
  }
}

// ---------------------------------------------------------------------------
// Backbone

std::vector<std::string> Backbone::layers() const {
  std::vector<std::string> names;
  for (const auto& [name, stage] : stages_) names.push_back(name);
  return names;
}

bool Backbone::has_layer(const std::string& layer) const {
  for (const auto& [name, stage] : stages_) {
    if (name == layer) return true;
  }
  return false;
}

std::size_t Backbone::stage_index(const std::string& layer) const {
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (stages_[i].first == layer) return i;
  }
  throw NotFoundError("layer '" + layer + "' not found; available layers: " + join(layers()));
}

void Backbone::add_stage(std::string name, Stage stage) {
  stages_.emplace_back(std::move(name), std::move(stage));
}

void Backbone::set_head(int features, Stage pool) {
  pool_ = std::move(pool);
  head_ = register_module("head", nn::Linear(features, 1));
}

torch::Tensor Backbone::forward_to(const torch::Tensor& x, const std::string& layer,
                                   AttentionSink* sink) {
  const auto last = stage_index(layer);
  torch::Tensor h = x;
  for (std::size_t i = 0; i <= last; ++i) h = stages_[i].second(h, sink);
  return h;
}

torch::Tensor Backbone::forward_from(const torch::Tensor& activations, const std::string& layer,
                                     AttentionSink* sink) {
  const auto first = stage_index(layer) + 1;
  torch::Tensor h = activations;
  for (std::size_t i = first; i < stages_.size(); ++i) h = stages_[i].second(h, sink);
  return head_(pool_(h, sink)).squeeze(-1);
}

torch::Tensor Backbone::forward(const torch::Tensor& x, AttentionSink* sink) {
  const auto& last = stages_.back().first;
  return forward_from(forward_to(x, last, sink), last, sink);
}

namespace {

torch::Tensor global_average_pool(const torch::Tensor& h, AttentionSink*) {
  return h.mean({2, 3});
}

}  // namespace

// ---------------------------------------------------------------------------
// TinyConv

TinyConv::TinyConv(const TinyConvConfig& config) {
  if (config.hidden_channels < 1 || config.feature_channels < 1 || config.kernel < 1 ||
      config.kernel % 2 == 0) {
    throw ValidationError("tiny_conv needs positive channel counts and an odd kernel");
  }
  const int pad = config.kernel / 2;
  conv1 = register_module(
      "conv1", nn::Conv2d(nn::Conv2dOptions(3, config.hidden_channels, config.kernel).padding(pad)));
  conv2 = register_module(
      "conv2", nn::Conv2d(nn::Conv2dOptions(config.hidden_channels, config.feature_channels,
                                            config.kernel)
                              .padding(pad)));
  add_stage("conv1", [c = conv1](const torch::Tensor& x, AttentionSink*) {
    return torch::relu(c.ptr()->forward(x));
  });
  add_stage("conv2", [c = conv2](const torch::Tensor& x, AttentionSink*) {
    return torch::relu(c.ptr()->forward(x));
  });
  set_head(config.feature_channels, global_average_pool);
}

// ---------------------------------------------------------------------------
// ResidualNet

namespace {

nn::Conv2d conv(int in, int out, int kernel, int stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(false));
}

class ResidualBlock : public nn::Module {
 public:
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
};

class BasicBlock : public ResidualBlock {
 public:
  static constexpr int kExpansion = 1;
  BasicBlock(int in, int planes, int stride) {
    conv1 = register_module("conv1", conv(in, planes, 3, stride));
    bn1 = register_module("bn1", nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", conv(planes, planes, 3, 1));
    bn2 = register_module("bn2", nn::BatchNorm2d(planes));
    if (stride != 1 || in != planes) {
      downsample = register_module(
          "downsample", nn::Sequential(conv(in, planes, 1, stride), nn::BatchNorm2d(planes)));
    }
  }
  torch::Tensor forward(const torch::Tensor& x) override {
    auto out = torch::relu(bn1(conv1(x)));
    out = bn2(conv2(out));
    auto identity = downsample ? downsample->forward(x) : x;
    return torch::relu(out + identity);
  }

  nn::Conv2d conv1{nullptr}, conv2{nullptr};
  nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
  nn::Sequential downsample{nullptr};
};

class Bottleneck : public ResidualBlock {
 public:
  static constexpr int kExpansion = 4;
  Bottleneck(int in, int planes, int stride) {
    conv1 = register_module("conv1", conv(in, planes, 1, 1));
    bn1 = register_module("bn1", nn::BatchNorm2d(planes));
    conv2 = register_module("conv2", conv(planes, planes, 3, stride));
    bn2 = register_module("bn2", nn::BatchNorm2d(planes));
    conv3 = register_module("conv3", conv(planes, planes * kExpansion, 1, 1));
    bn3 = register_module("bn3", nn::BatchNorm2d(planes * kExpansion));
    if (stride != 1 || in != planes * kExpansion) {
      downsample = register_module(
          "downsample", nn::Sequential(conv(in, planes * kExpansion, 1, stride),
                                       nn::BatchNorm2d(planes * kExpansion)));
    }
  }
  torch::Tensor forward(const torch::Tensor& x) override {
    auto out = torch::relu(bn1(conv1(x)));
    out = torch::relu(bn2(conv2(out)));
    out = bn3(conv3(out));
    auto identity = downsample ? downsample->forward(x) : x;
    return torch::relu(out + identity);
  }

  nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
  nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
  nn::Sequential downsample{nullptr};
};

template <typename Block>
nn::ModuleList make_stage(int& in, int planes, int blocks, int stride) {
  nn::ModuleList list;
  for (int b = 0; b < blocks; ++b) {
    list->push_back(std::make_shared<Block>(in, planes, b == 0 ? stride : 1));
    in = planes * Block::kExpansion;
  }
  return list;
}

torch::Tensor run_blocks(const nn::ModuleList& list, torch::Tensor x) {
  for (const auto& module : *list) x = module->as<ResidualBlock>()->forward(x);
  return x;
}

}  // namespace

ResidualNet::ResidualNet(const ResidualConfig& config) {
  std::array<int, 4> blocks{};
  bool bottleneck = true;
  switch (config.depth) {
    case 18: blocks = {2, 2, 2, 2}; bottleneck = false; break;
    case 34: blocks = {3, 4, 6, 3}; bottleneck = false; break;
    case 50: blocks = {3, 4, 6, 3}; break;
    case 101: blocks = {3, 4, 23, 3}; break;
    case 152: blocks = {3, 8, 36, 3}; break;
    default:
      throw ValidationError("unsupported residual depth " + std::to_string(config.depth) +
                            " (expected 18, 34, 50, 101 or 152)");
  }
  auto conv1 = register_module("conv1", conv(3, 64, 7, 2));
  auto bn1 = register_module("bn1", nn::BatchNorm2d(64));
  add_stage("stem", [conv1, bn1](const torch::Tensor& x, AttentionSink*) {
    auto h = torch::relu(bn1->forward(conv1->forward(x)));
    return torch::max_pool2d(h, 3, 2, 1);
  });

  int in = 64;
  const std::array<int, 4> planes{64, 128, 256, 512};
  for (int s = 0; s < 4; ++s) {
    auto list = bottleneck ? make_stage<Bottleneck>(in, planes[s], blocks[s], s == 0 ? 1 : 2)
                           : make_stage<BasicBlock>(in, planes[s], blocks[s], s == 0 ? 1 : 2);
    const std::string name = "layer" + std::to_string(s + 1);
    register_module(name, list);
    add_stage(name, [list](const torch::Tensor& x, AttentionSink*) { return run_blocks(list, x); });
  }
  set_head(in, global_average_pool);

  for (auto& module : modules(/*include_self=*/false)) {
    if (auto* c = module->as<nn::Conv2d>()) {
      nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
    }
  }
}

// ---------------------------------------------------------------------------
// VisionTransformer

namespace {

class EncoderBlock : public nn::Module {
 public:
  EncoderBlock(int dim, int heads, int mlp_ratio) : heads_(heads) {
    ln_1 = register_module("ln_1", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
    in_proj = register_module("in_proj", nn::Linear(dim, 3 * dim));
    out_proj = register_module("out_proj", nn::Linear(dim, dim));
    ln_2 = register_module("ln_2", nn::LayerNorm(nn::LayerNormOptions({dim}).eps(1e-6)));
    mlp_1 = register_module("mlp_1", nn::Linear(dim, mlp_ratio * dim));
    mlp_2 = register_module("mlp_2", nn::Linear(mlp_ratio * dim, dim));
  }

  torch::Tensor forward(const torch::Tensor& x, AttentionSink* sink) {
    const auto n = x.size(0), t = x.size(1), d = x.size(2);
    const auto head_dim = d / heads_;
    auto qkv = in_proj(ln_1(x)).reshape({n, t, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
    auto q = qkv[0], k = qkv[1], v = qkv[2];
    auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    auto attention = torch::softmax(logits, -1);
    if (sink) sink->push_back(attention.detach());
    auto mixed = torch::matmul(attention, v).transpose(1, 2).reshape({n, t, d});
    auto h = x + out_proj(mixed);
    return h + mlp_2(torch::gelu(mlp_1(ln_2(h))));
  }

  nn::LayerNorm ln_1{nullptr}, ln_2{nullptr};
  nn::Linear in_proj{nullptr}, out_proj{nullptr}, mlp_1{nullptr}, mlp_2{nullptr};

 private:
  int heads_;
};

}  // namespace

VisionTransformer::VisionTransformer(const TransformerConfig& config, int input_side)
    : config_(config) {
  if (config.patch < 1 || input_side % config.patch != 0) {
    throw ValidationError("input side " + std::to_string(input_side) +
                          " is not divisible by patch size " + std::to_string(config.patch));
  }
  if (config.heads < 1 || config.dim % config.heads != 0) {
    throw ValidationError("transformer dim must be divisible by the head count");
  }
  if (config.depth < 1) throw ValidationError("transformer depth must be at least 1");
  grid_ = input_side / config.patch;
  const int tokens = grid_ * grid_ + 1;

  auto conv_proj = register_module(
      "conv_proj",
      nn::Conv2d(nn::Conv2dOptions(3, config.dim, config.patch).stride(config.patch)));
  auto class_token = register_parameter("class_token", torch::zeros({1, 1, config.dim}));
  auto pos_embedding =
      register_parameter("pos_embedding", torch::randn({1, tokens, config.dim}) * 0.02);
  add_stage("embed", [conv_proj, class_token, pos_embedding](const torch::Tensor& x, AttentionSink*) {
    auto patches = conv_proj->forward(x).flatten(2).transpose(1, 2);  // (N, g*g, D)
    auto cls = class_token.expand({patches.size(0), 1, patches.size(2)});
    return torch::cat({cls, patches}, 1) + pos_embedding;
  });

  nn::ModuleList blocks;
  for (int b = 0; b < config.depth; ++b) {
    auto block = std::make_shared<EncoderBlock>(config.dim, config.heads, config.mlp_ratio);
    blocks->push_back(block);
    add_stage("block" + std::to_string(b), [block](const torch::Tensor& x, AttentionSink* sink) {
      return block->forward(x, sink);
    });
  }
  register_module("blocks", blocks);

  auto ln = register_module("ln", nn::LayerNorm(nn::LayerNormOptions({config.dim}).eps(1e-6)));
  set_head(config.dim, [ln](const torch::Tensor& h, AttentionSink*) {
    return ln->forward(h).select(1, 0);
  });
}

std::string VisionTransformer::default_layer() const {
  // Tokens entering the final block (and hence its first normalisation).
  return config_.depth >= 2 ? "block" + std::to_string(config_.depth - 2) : "embed";
}

std::shared_ptr<Backbone> make_backbone(const BackboneConfig& config) {
  if (config.input_side < 1) throw ValidationError("input side must be positive");
  switch (config.kind) {
    case BackboneKind::tiny_conv: return std::make_shared<TinyConv>(config.tiny);
    case BackboneKind::conv_residual: return std::make_shared<ResidualNet>(config.residual);
    case BackboneKind::attention_transformer:
      return std::make_shared<VisionTransformer>(config.transformer, config.input_side);
  }
  throw ValidationError("unknown backbone kind");
}

}  // namespace streetcam
