#pragma once

#include <torch/torch.h>

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace streetcam {

enum class BackboneKind { conv_residual, attention_transformer, tiny_conv };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& name);

// conv -> ReLU -> conv -> ReLU, 'same' padding, stride 1. Small enough that
// every activation and gradient can be checked by hand.
struct TinyConvConfig {
  int hidden_channels = 8;
  int feature_channels = 16;
  int kernel = 3;
};

// ResNet family: depth 18/34 use basic blocks, 50/101/152 bottlenecks.
struct ResidualConfig {
  int depth = 50;
};

// ViT/DeiT encoder: patch embedding + CLS token + pre-norm blocks.
// Defaults are the DeiT-small geometry.
struct TransformerConfig {
  int patch = 16;
  int dim = 384;
  int depth = 12;
  int heads = 6;
  int mlp_ratio = 4;
};

struct BackboneConfig {
  BackboneKind kind = BackboneKind::tiny_conv;
  int input_side = 224;
  TinyConvConfig tiny;
  ResidualConfig residual;
  TransformerConfig transformer;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

// Per-layer attention probabilities, each (N, heads, T, T), appended in layer order.
using AttentionSink = std::vector<torch::Tensor>;

// A feature extractor plus scalar head, split into named stages so that any
// stage output can serve as a capture point: forward_to() runs the network up
// to and including a stage, forward_from() runs the remainder and the head.
class Backbone : public torch::nn::Module {
 public:
  std::vector<std::string> layers() const;
  virtual std::string default_layer() const = 0;
  virtual bool token_based() const { return false; }
  bool has_layer(const std::string& layer) const;

  // (N,3,H,W) -> activations at `layer`.
  torch::Tensor forward_to(const torch::Tensor& x, const std::string& layer,
                           AttentionSink* sink = nullptr);
  // activations at `layer` -> scores (N).
  torch::Tensor forward_from(const torch::Tensor& activations, const std::string& layer,
                             AttentionSink* sink = nullptr);
  // (N,3,H,W) -> scores (N).
  torch::Tensor forward(const torch::Tensor& x, AttentionSink* sink = nullptr);

  // The scalar unit; exposed for tests that hand-set weights.
  torch::nn::Linear& head_linear() { return head_; }

 protected:
  using Stage = std::function<torch::Tensor(const torch::Tensor&, AttentionSink*)>;
  void add_stage(std::string name, Stage stage);
  void set_head(int features, Stage pool);

 private:
  std::size_t stage_index(const std::string& layer) const;

  std::vector<std::pair<std::string, Stage>> stages_;
  Stage pool_;
  torch::nn::Linear head_{nullptr};
};

class TinyConv : public Backbone {
 public:
  explicit TinyConv(const TinyConvConfig& config);
  std::string default_layer() const override { return "conv2"; }

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::Conv2d conv2{nullptr};
};

class ResidualNet : public Backbone {
 public:
  explicit ResidualNet(const ResidualConfig& config);
  std::string default_layer() const override { return "layer4"; }
};

class VisionTransformer : public Backbone {
 public:
  VisionTransformer(const TransformerConfig& config, int input_side);
  std::string default_layer() const override;
  bool token_based() const override { return true; }
  int grid_side() const { return grid_; }

 private:
  TransformerConfig config_;
  int grid_;
};

std::shared_ptr<Backbone> make_backbone(const BackboneConfig& config);

}  // namespace streetcam
