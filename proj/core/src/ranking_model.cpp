#include "streetcam/ranking_model.hpp"

#include <cmath>
#include <unordered_set>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace {

void check_outcome(int y) {
  if (y != 1 && y != -1) {
    throw ValidationError("comparison outcome must be -1 or +1, got " + std::to_string(y));
  }
}

}  // namespace

ScoringModel::ScoringModel(BackboneConfig config, PerceptualAttribute attribute, std::uint64_t seed)
    : config_(config), attribute_(attribute) {
  torch::manual_seed(seed);
  backbone_ = make_backbone(config_);
  backbone_->eval();
}

void ScoringModel::check_input(const torch::Tensor& images) const {
  const auto side = config_.input_side;
  const bool single = images.dim() == 3 && images.size(0) == 3;
  const bool batch = images.dim() == 4 && images.size(1) == 3;
  if (!(single || batch) || images.size(-1) != side || images.size(-2) != side) {
    throw ValidationError("input shape " + std::string(c10::str(images.sizes())) +
                          " does not match model input (3, " + std::to_string(side) + ", " +
                          std::to_string(side) + ")");
  }
}

torch::Tensor ScoringModel::score_batch(const torch::Tensor& images) const {
  check_input(images);
  torch::NoGradGuard no_grad;
  auto batch = images.dim() == 3 ? images.unsqueeze(0) : images;
  return backbone_->forward(batch.to(dtype()));
}

torch::Dtype ScoringModel::dtype() const {
  return backbone_->parameters().front().scalar_type();
}

void ScoringModel::to(torch::Dtype dtype) { backbone_->to(dtype); }

ScoringModel ScoringModel::clone() const {
  ScoringModel copy(config_, attribute_);
  torch::NoGradGuard no_grad;
  copy.backbone_->to(dtype());
  auto src = backbone_->named_parameters();
  for (auto& p : copy.backbone_->named_parameters()) p.value().copy_(src[p.key()]);
  auto src_buffers = backbone_->named_buffers();
  for (auto& b : copy.backbone_->named_buffers()) b.value().copy_(src_buffers[b.key()]);
  if (backbone_->is_training()) copy.backbone_->train();
  return copy;
}

double score(const ScoringModel& model, const PreprocessedImage& image) {
  auto value = model.score_batch(image.tensor).item<double>();
  if (!std::isfinite(value)) throw Error("model produced a non-finite score");
  return value;
}

ScoreTable score_images(const ScoringModel& model, const std::vector<std::string>& image_ids,
                        const ImageSource& images, int batch_size) {
  ScoreTable table;
  for (std::size_t start = 0; start < image_ids.size(); start += batch_size) {
    const auto end = std::min(image_ids.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::string> chunk(image_ids.begin() + start, image_ids.begin() + end);
    auto scores = model.score_batch(images.batch(chunk)).to(torch::kDouble).contiguous();
    auto acc = scores.accessor<double, 1>();
    for (std::size_t i = 0; i < chunk.size(); ++i) table[chunk[i]] = acc[i];
  }
  return table;
}

double ranking_loss(double f_i, double f_j, int y, double margin) {
  check_outcome(y);
  return std::max(0.0, margin - y * (f_i - f_j));
}

double ranking_loss_gradient(double f_i, double f_j, int y, double margin) {
  check_outcome(y);
  return margin - y * (f_i - f_j) > 0 ? -static_cast<double>(y) : 0.0;
}

torch::Tensor ranking_loss(const torch::Tensor& f_left, const torch::Tensor& f_right,
                           const torch::Tensor& outcome, double margin) {
  return torch::relu(margin - outcome * (f_left - f_right)).mean();
}

double pairwise_accuracy(const ScoreTable& scores, const std::vector<Comparison>& comparisons) {
  if (comparisons.empty()) throw ValidationError("pairwise accuracy is undefined for zero comparisons");
  std::size_t correct = 0;
  for (const auto& c : comparisons) {
    check_outcome(c.outcome);
    auto l = scores.find(c.left);
    auto r = scores.find(c.right);
    if (l == scores.end()) throw NotFoundError("no score for image '" + c.left + "'");
    if (r == scores.end()) throw NotFoundError("no score for image '" + c.right + "'");
    if (c.outcome * (l->second - r->second) > 0) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(comparisons.size());
}

std::vector<std::string> referenced_images(const std::vector<Comparison>& comparisons) {
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& c : comparisons) {
    if (seen.insert(c.left).second) ids.push_back(c.left);
    if (seen.insert(c.right).second) ids.push_back(c.right);
  }
  return ids;
}

double pairwise_accuracy(const ScoringModel& model, const std::vector<Comparison>& comparisons,
                         const ImageSource& images) {
  if (comparisons.empty()) throw ValidationError("pairwise accuracy is undefined for zero comparisons");
  return pairwise_accuracy(score_images(model, referenced_images(comparisons), images), comparisons);
}

}  // namespace streetcam
