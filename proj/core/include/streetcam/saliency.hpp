#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "streetcam/attribute.hpp"
#include "streetcam/ranking_model.hpp"

namespace streetcam {

enum class SaliencyMethod { gradcam, eigencam, ablationcam, attention_rollout };
enum class TargetSign { positive, negative };

std::string to_string(SaliencyMethod method);
SaliencyMethod parse_saliency_method(const std::string& name);
std::string to_string(TargetSign sign);
TargetSign parse_target_sign(const std::string& name);

// Row-major dense matrix of doubles.
struct Grid {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(int r, int c, double fill = 0.0)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, fill) {}
  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  double min() const;
  double max() const;
  bool operator==(const Grid&) const = default;
};

struct SaliencyMap {
  std::string image_id;
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  SaliencyMethod method = SaliencyMethod::gradcam;
  TargetSign sign = TargetSign::positive;
  Grid grid;       // feature resolution, values in [0,1]
  Grid upsampled;  // image resolution, values in [0,1]
  // Extremes of the map handed to min-max normalisation.
  double raw_min = 0.0;
  double raw_max = 0.0;
};

// Forward activations and target gradients at one layer for one image.
// Spatial captures hold (C,h,w); token captures hold (T,D) with the CLS
// token first. All tensors are float64 copies.
struct ActivationCapture {
  std::string image_id;
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  std::string layer;
  bool token_based = false;
  TargetSign sign = TargetSign::positive;
  double score = 0.0;  // f(x), unsigned
  torch::Tensor activations;
  torch::Tensor gradients;  // d(s * f)/d activations, s = +1 or -1
  // Per-layer attention, (heads, T, T), for transformer backbones only.
  std::vector<torch::Tensor> attention;
  // Activations in the model's own dtype with a batch axis, for re-entry
  // into the network (Ablation-CAM).
  torch::Tensor native_activations;
  int output_rows = 0;  // resolution of SaliencyMap::upsampled
  int output_cols = 0;
};

struct CaptureOptions {
  std::optional<std::string> layer;  // default: the backbone's designated layer
  std::string image_id;
  // Upsampling target; defaults to the model input side.
  int output_rows = 0;
  int output_cols = 0;
};

// Runs the model on one (3,side,side) image and differentiates s * f(x) with
// respect to the activations at the capture layer. Parameters are not
// touched (no .grad accumulation). Throws NotFoundError listing available
// layers for an unknown layer.
ActivationCapture capture(const ScoringModel& model, const torch::Tensor& image, TargetSign sign,
                          const CaptureOptions& options = {});

// Activations/gradients as (C,h,w): token captures drop CLS and reshape the
// remaining T-1 tokens to a sqrt(T-1) square grid (ValidationError otherwise).
torch::Tensor spatial_activations(const ActivationCapture& capture);
torch::Tensor spatial_gradients(const ActivationCapture& capture);

// Min-max normalise to [0,1]; a constant map becomes all zeros.
Grid normalize(const Grid& raw);
// Bilinear resize (pixel-centre aligned), clamped to [0,1].
Grid upsample(const Grid& grid, int rows, int cols);

// GradCAM: alpha_k = spatial mean of dTarget/dA_k; map = ReLU(sum_k alpha_k A_k).
std::vector<double> gradcam_weights(const ActivationCapture& capture);
Grid gradcam_raw(const ActivationCapture& capture);  // before ReLU
SaliencyMap gradcam(const ActivationCapture& capture);

// Eigen-CAM: projection of the (positions x channels) activation matrix on its
// first right singular vector, oriented to a non-negative mean. Gradient-free.
Grid eigencam_raw(const ActivationCapture& capture);
SaliencyMap eigencam(const ActivationCapture& capture);

struct AblationWeights {
  std::vector<double> weights;  // (f - f_k) / f per channel
  double base_score = 0.0;      // f(x)
  int forward_passes = 0;       // extra passes from the capture layer (= K)
};

inline constexpr double kAblationEpsilon = 1e-8;

// Ablation-CAM: zero channel k at the capture layer and re-run the rest of the
// network. Throws ValidationError when |f(x)| <= epsilon.
AblationWeights ablation_weights(const ScoringModel& model, const ActivationCapture& capture,
                                 double epsilon = kAblationEpsilon);
SaliencyMap ablationcam(const ScoringModel& model, const ActivationCapture& capture,
                        double epsilon = kAblationEpsilon);

// Attention rollout over per-layer (heads,T,T) or (T,T) attention, first layer
// first: A_hat = row_normalise(0.5 * mean_heads(A) + 0.5 * I),
// rollout = A_hat_L * ... * A_hat_1. Returns a float64 (T,T) matrix.
torch::Tensor rollout(const std::vector<torch::Tensor>& attention);
// CLS row of the rollout over patch tokens, on the patch grid. Throws
// UnsupportedError for captures without attention (convolutional backbones).
SaliencyMap attention_rollout(const ActivationCapture& capture);

// Dispatches on method. Ablation-CAM needs the model; the others ignore it.
SaliencyMap explain(const ScoringModel& model, const ActivationCapture& capture,
                    SaliencyMethod method);

// Jet-colormapped blend over an 8-bit BGR image: (1-alpha)*image + alpha*heat.
// The map is resampled to the image size when needed.
cv::Mat render_overlay(const SaliencyMap& map, const cv::Mat& image_bgr, double alpha);
// Pure colormapped heat image at the given size.
cv::Mat render_heat(const SaliencyMap& map, int rows, int cols);

// 8-bit grayscale PNG of round(255 * upsampled).
void write_heatmap_png(const SaliencyMap& map, const std::filesystem::path& path);
void write_sidecar_json(const SaliencyMap& map, const std::string& model_checkpoint,
                        const std::filesystem::path& path);

}  // namespace streetcam
