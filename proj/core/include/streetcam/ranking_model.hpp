#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "streetcam/attribute.hpp"
#include "streetcam/backbone.hpp"
#include "streetcam/dataset.hpp"

namespace streetcam {

// f(x): a backbone with a scalar head, trained for one perceptual attribute.
// Both members of a comparison are scored by the same parameters.
//
// Copies share parameters (the backbone is held by pointer); use clone() for
// an independent copy. Scoring is read-only and safe to call concurrently as
// long as nothing mutates the parameters.
class ScoringModel {
 public:
  ScoringModel(BackboneConfig config, PerceptualAttribute attribute, std::uint64_t seed = 0);

  const BackboneConfig& config() const { return config_; }
  BackboneKind kind() const { return config_.kind; }
  PerceptualAttribute attribute() const { return attribute_; }
  Backbone& backbone() const { return *backbone_; }
  const std::shared_ptr<Backbone>& backbone_ptr() const { return backbone_; }

  // Throws ValidationError unless `images` is (N,3,side,side) or (3,side,side).
  void check_input(const torch::Tensor& images) const;

  // Inference-mode scores for a (N,3,side,side) batch.
  torch::Tensor score_batch(const torch::Tensor& images) const;

  torch::Dtype dtype() const;
  // Casts parameters; tests use double precision for finite differences.
  void to(torch::Dtype dtype);
  ScoringModel clone() const;

 private:
  BackboneConfig config_;
  PerceptualAttribute attribute_;
  std::shared_ptr<Backbone> backbone_;
};

double score(const ScoringModel& model, const PreprocessedImage& image);

using ScoreTable = std::unordered_map<std::string, double>;

// Scores every listed image once, in batches.
ScoreTable score_images(const ScoringModel& model, const std::vector<std::string>& image_ids,
                        const ImageSource& images, int batch_size = 32);

// max(0, margin - y * (f_i - f_j)); margin defaults to 0.
double ranking_loss(double f_i, double f_j, int y, double margin = 0.0);
// d/d f_i of ranking_loss; 0 at the kink.
double ranking_loss_gradient(double f_i, double f_j, int y, double margin = 0.0);
// Batched mean of ranking_loss over (N) score tensors, differentiable.
torch::Tensor ranking_loss(const torch::Tensor& f_left, const torch::Tensor& f_right,
                           const torch::Tensor& outcome, double margin = 0.0);

// Fraction of comparisons with y * (f_left - f_right) > 0. Ties are wrong.
double pairwise_accuracy(const ScoreTable& scores, const std::vector<Comparison>& comparisons);
double pairwise_accuracy(const ScoringModel& model, const std::vector<Comparison>& comparisons,
                         const ImageSource& images);

// Unique image ids referenced by the comparisons, in first-seen order.
std::vector<std::string> referenced_images(const std::vector<Comparison>& comparisons);

}  // namespace streetcam
