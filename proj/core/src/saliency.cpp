#include "streetcam/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "streetcam/errors.hpp"

namespace streetcam {

std::string to_string(SaliencyMethod method) {
  switch (method) {
    case SaliencyMethod::gradcam: return "gradcam";
    case SaliencyMethod::eigencam: return "eigencam";
    case SaliencyMethod::ablationcam: return "ablationcam";
    case SaliencyMethod::attention_rollout: return "attention_rollout";
  }
  return "unknown";
}

SaliencyMethod parse_saliency_method(const std::string& name) {
  if (name == "gradcam") return SaliencyMethod::gradcam;
  if (name == "eigencam") return SaliencyMethod::eigencam;
  if (name == "ablationcam") return SaliencyMethod::ablationcam;
  if (name == "attention_rollout") return SaliencyMethod::attention_rollout;
  throw ValidationError("unknown saliency method '" + name +
                        "' (expected gradcam, eigencam, ablationcam or attention_rollout)");
}

std::string to_string(TargetSign sign) { return sign == TargetSign::positive ? "positive" : "negative"; }

TargetSign parse_target_sign(const std::string& name) {
  if (name == "positive") return TargetSign::positive;
  if (name == "negative") return TargetSign::negative;
  throw ValidationError("unknown sign '" + name + "' (expected positive or negative)");
}

double Grid::min() const { return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end()); }
double Grid::max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

namespace {

class EvalModeGuard {
 public:
  explicit EvalModeGuard(Backbone& backbone) : backbone_(backbone), training_(backbone.is_training()) {
    backbone_.eval();
  }
  ~EvalModeGuard() { backbone_.train(training_); }

 private:
  Backbone& backbone_;
  bool training_;
};

Grid to_grid(const torch::Tensor& t) {
  auto m = t.to(torch::kDouble).contiguous();
  Grid g(static_cast<int>(m.size(0)), static_cast<int>(m.size(1)));
  std::copy(m.data_ptr<double>(), m.data_ptr<double>() + m.numel(), g.values.begin());
  return g;
}

torch::Tensor tokens_to_spatial(const torch::Tensor& tokens) {
  const auto t = tokens.size(0) - 1;
  const auto side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(std::max<int64_t>(t, 0)))));
  if (t < 1 || side * side != t) {
    throw ValidationError("cannot reshape " + std::to_string(t) +
                          " patch tokens (CLS dropped) to a square grid");
  }
  return tokens.slice(0, 1).reshape({side, side, tokens.size(1)}).permute({2, 0, 1}).contiguous();
}

SaliencyMap finish(const ActivationCapture& capture, SaliencyMethod method, const Grid& raw) {
  SaliencyMap map;
  map.image_id = capture.image_id;
  map.attribute = capture.attribute;
  map.method = method;
  map.sign = capture.sign;
  map.raw_min = raw.min();
  map.raw_max = raw.max();
  map.grid = normalize(raw);
  map.upsampled = upsample(map.grid, capture.output_rows, capture.output_cols);
  return map;
}

Grid relu(Grid g) {
  for (auto& v : g.values) v = std::max(v, 0.0);
  return g;
}

// sum_k w_k A_k over a (C,h,w) tensor.
Grid weighted_sum(const torch::Tensor& spatial, const std::vector<double>& weights) {
  const int channels = static_cast<int>(spatial.size(0));
  Grid out(static_cast<int>(spatial.size(1)), static_cast<int>(spatial.size(2)));
  auto acc = spatial.accessor<double, 3>();
  for (int k = 0; k < channels; ++k) {
    for (int r = 0; r < out.rows; ++r) {
      for (int c = 0; c < out.cols; ++c) out.at(r, c) += weights[k] * acc[k][r][c];
    }
  }
  return out;
}

}  // namespace

ActivationCapture capture(const ScoringModel& model, const torch::Tensor& image, TargetSign sign,
                          const CaptureOptions& options) {
  if (image.dim() != 3) throw ValidationError("capture expects a single (3,H,W) image");
  model.check_input(image);
  auto& backbone = model.backbone();
  const std::string layer = options.layer.value_or(backbone.default_layer());
  if (!backbone.has_layer(layer)) {
    throw NotFoundError("layer '" + layer + "' not found; available layers: " + join(backbone.layers()));
  }
  EvalModeGuard guard(backbone);

  AttentionSink sink;
  AttentionSink* sink_ptr = backbone.token_based() ? &sink : nullptr;
  torch::Tensor activations;
  {
    torch::NoGradGuard no_grad;
    activations = backbone.forward_to(image.unsqueeze(0).to(model.dtype()), layer, sink_ptr);
  }
  activations = activations.detach().requires_grad_(true);
  auto score = backbone.forward_from(activations, layer, sink_ptr).sum();
  auto target = sign == TargetSign::positive ? score : -score;
  auto gradients = torch::autograd::grad({target}, {activations})[0];

  ActivationCapture out;
  out.image_id = options.image_id;
  out.attribute = model.attribute();
  out.layer = layer;
  out.token_based = backbone.token_based();
  out.sign = sign;
  out.score = score.item<double>();
  out.native_activations = activations.detach();
  out.activations = activations.detach().squeeze(0).to(torch::kDouble).contiguous();
  out.gradients = gradients.detach().squeeze(0).to(torch::kDouble).contiguous();
  for (const auto& a : sink) out.attention.push_back(a.squeeze(0).to(torch::kDouble).contiguous());
  out.output_rows = options.output_rows > 0 ? options.output_rows : model.config().input_side;
  out.output_cols = options.output_cols > 0 ? options.output_cols : model.config().input_side;
  return out;
}

torch::Tensor spatial_activations(const ActivationCapture& capture) {
  if (capture.token_based) return tokens_to_spatial(capture.activations);
  if (capture.activations.dim() != 3) {
    throw ValidationError("capture layer '" + capture.layer + "' is not a (C,h,w) feature map");
  }
  return capture.activations;
}

torch::Tensor spatial_gradients(const ActivationCapture& capture) {
  if (capture.token_based) return tokens_to_spatial(capture.gradients);
  return capture.gradients;
}

Grid normalize(const Grid& raw) {
  Grid out(raw.rows, raw.cols);
  if (raw.values.empty()) return out;
  const double lo = raw.min();
  const double hi = raw.max();
  const double range = hi - lo;
  if (!(range > 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi))))) return out;
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    out.values[i] = std::clamp((raw.values[i] - lo) / range, 0.0, 1.0);
  }
  return out;
}

Grid upsample(const Grid& grid, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw ValidationError("upsample target must be positive");
  if (grid.rows == rows && grid.cols == cols) return grid;
  if (grid.values.empty()) throw ValidationError("cannot upsample an empty grid");
  cv::Mat src(grid.rows, grid.cols, CV_64F, const_cast<double*>(grid.values.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(cols, rows), 0, 0, cv::INTER_LINEAR);
  Grid out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double* row = dst.ptr<double>(r);
    for (int c = 0; c < cols; ++c) out.at(r, c) = std::clamp(row[c], 0.0, 1.0);
  }
  return out;
}

std::vector<double> gradcam_weights(const ActivationCapture& capture) {
  auto alpha = spatial_gradients(capture).mean({1, 2}).contiguous();
  return {alpha.data_ptr<double>(), alpha.data_ptr<double>() + alpha.numel()};
}

Grid gradcam_raw(const ActivationCapture& capture) {
  return weighted_sum(spatial_activations(capture), gradcam_weights(capture));
}

SaliencyMap gradcam(const ActivationCapture& capture) {
  return finish(capture, SaliencyMethod::gradcam, relu(gradcam_raw(capture)));
}

Grid eigencam_raw(const ActivationCapture& capture) {
  auto spatial = spatial_activations(capture);
  const auto channels = spatial.size(0), h = spatial.size(1), w = spatial.size(2);
  if (h * w < 2) throw ValidationError("Eigen-CAM needs at least 2 spatial positions");
  auto matrix = spatial.reshape({channels, h * w}).t();  // positions x channels
  auto [u, s, vh] = torch::linalg_svd(matrix, /*full_matrices=*/false);
  auto projection = torch::matmul(matrix, vh[0]);
  if (projection.mean().item<double>() < 0.0) projection = -projection;
  return to_grid(projection.reshape({h, w}));
}

SaliencyMap eigencam(const ActivationCapture& capture) {
  return finish(capture, SaliencyMethod::eigencam, eigencam_raw(capture));
}

AblationWeights ablation_weights(const ScoringModel& model, const ActivationCapture& capture,
                                 double epsilon) {
  if (!capture.native_activations.defined()) {
    throw ValidationError("capture carries no activations to ablate");
  }
  const double base = capture.score;
  if (!(std::abs(base) > epsilon)) {
    throw ValidationError("Ablation-CAM is undefined for |f(x)| <= " + std::to_string(epsilon) +
                          " (f = " + std::to_string(base) +
                          "); the positive/negative sign convention cannot stabilise the ratio");
  }
  auto& backbone = model.backbone();
  EvalModeGuard guard(backbone);
  torch::NoGradGuard no_grad;

  const double s = capture.sign == TargetSign::positive ? 1.0 : -1.0;
  const int channel_axis = capture.token_based ? 2 : 1;
  const auto channels = capture.native_activations.size(channel_axis);
  AblationWeights out;
  out.base_score = base;
  out.weights.reserve(static_cast<std::size_t>(channels));
  for (int64_t k = 0; k < channels; ++k) {
    auto ablated = capture.native_activations.clone();
    ablated.select(channel_axis, k).zero_();
    const double f_k = backbone.forward_from(ablated, capture.layer).item<double>();
    ++out.forward_passes;
    out.weights.push_back((s * base - s * f_k) / (s * base));
  }
  return out;
}

SaliencyMap ablationcam(const ScoringModel& model, const ActivationCapture& capture, double epsilon) {
  auto spatial = spatial_activations(capture);
  auto weights = ablation_weights(model, capture, epsilon);
  return finish(capture, SaliencyMethod::ablationcam, relu(weighted_sum(spatial, weights.weights)));
}

torch::Tensor rollout(const std::vector<torch::Tensor>& attention) {
  if (attention.empty()) throw ValidationError("attention rollout needs at least one layer");
  torch::Tensor result;
  for (const auto& layer : attention) {
    auto a = layer.to(torch::kDouble);
    if (a.dim() == 3) a = a.mean(0);
    if (a.dim() != 2 || a.size(0) != a.size(1)) {
      throw ValidationError("attention must be (heads,T,T) or (T,T)");
    }
    if ((a < 0).any().item<bool>()) throw ValidationError("attention weights must be non-negative");
    auto residual = 0.5 * a + 0.5 * torch::eye(a.size(0), a.options());
    residual = residual / residual.sum(1, /*keepdim=*/true);
    if (result.defined() && result.size(0) != residual.size(0)) {
      throw ValidationError("attention layers disagree on token count");
    }
    result = result.defined() ? torch::matmul(residual, result) : residual;
  }
  return result;
}

SaliencyMap attention_rollout(const ActivationCapture& capture) {
  if (!capture.token_based || capture.attention.empty()) {
    throw UnsupportedError("attention rollout applies only to the attention_transformer backbone");
  }
  auto r = rollout(capture.attention);
  auto cls_row = r[0].slice(0, 1);
  const auto t = cls_row.size(0);
  const auto side = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(t))));
  if (side * side != t) {
    throw ValidationError("cannot reshape " + std::to_string(t) + " patch tokens to a square grid");
  }
  return finish(capture, SaliencyMethod::attention_rollout, to_grid(cls_row.reshape({side, side})));
}

SaliencyMap explain(const ScoringModel& model, const ActivationCapture& capture, SaliencyMethod method) {
  switch (method) {
    case SaliencyMethod::gradcam: return gradcam(capture);
    case SaliencyMethod::eigencam: return eigencam(capture);
    case SaliencyMethod::ablationcam: return ablationcam(model, capture);
    case SaliencyMethod::attention_rollout: return attention_rollout(capture);
  }
  throw ValidationError("unknown saliency method");
}

namespace {

cv::Mat to_u8(const Grid& g) {
  cv::Mat out(g.rows, g.cols, CV_8U);
  for (int r = 0; r < g.rows; ++r) {
    auto* row = out.ptr<unsigned char>(r);
    for (int c = 0; c < g.cols; ++c) {
      row[c] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(g.at(r, c), 0.0, 1.0)));
    }
  }
  return out;
}

const Grid& at_size(const SaliencyMap& map, int rows, int cols, Grid& scratch) {
  if (map.upsampled.rows == rows && map.upsampled.cols == cols) return map.upsampled;
  scratch = upsample(map.grid, rows, cols);
  return scratch;
}

}  // namespace

cv::Mat render_heat(const SaliencyMap& map, int rows, int cols) {
  Grid scratch;
  cv::Mat heat;
  cv::applyColorMap(to_u8(at_size(map, rows, cols, scratch)), heat, cv::COLORMAP_JET);
  return heat;
}

cv::Mat render_overlay(const SaliencyMap& map, const cv::Mat& image_bgr, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("overlay alpha must be in [0,1]");
  if (image_bgr.empty() || image_bgr.type() != CV_8UC3) {
    throw ValidationError("overlay expects an 8-bit 3-channel image");
  }
  if (alpha == 0.0) return image_bgr.clone();
  cv::Mat heat = render_heat(map, image_bgr.rows, image_bgr.cols);
  if (alpha == 1.0) return heat;
  cv::Mat out;
  cv::addWeighted(image_bgr, 1.0 - alpha, heat, alpha, 0.0, out);
  return out;
}

void write_heatmap_png(const SaliencyMap& map, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), to_u8(map.upsampled))) {
    throw Error("failed to write " + path.string());
  }
}

void write_sidecar_json(const SaliencyMap& map, const std::string& model_checkpoint,
                        const std::filesystem::path& path) {
  nlohmann::json j = {{"image_id", map.image_id},
                      {"attribute", to_string(map.attribute)},
                      {"method", to_string(map.method)},
                      {"model_checkpoint", model_checkpoint},
                      {"sign", to_string(map.sign)},
                      {"raw_min", map.raw_min},
                      {"raw_max", map.raw_max},
                      {"grid_h", map.grid.rows},
                      {"grid_w", map.grid.cols}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("failed to write " + path.string());
}

}  // namespace streetcam
