#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "streetcam/dataset.hpp"
#include "streetcam/ranking_model.hpp"

namespace streetcam {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& name);

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 20;
  int batch_size = 32;
  std::uint64_t seed = 0;
  // Start from imported weights. The trainer itself does not fetch weights;
  // the caller imports them before train() and this flag is recorded.
  bool pretrained = true;
  OptimizerKind optimizer = OptimizerKind::sgd;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double margin = 0.0;
  bool shuffle = true;
  // Fine-tune only the scalar head; all layers are trained by default.
  bool freeze_backbone = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochEntry {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochEntry> epochs;
  int best_epoch = 0;
  double best_validation_accuracy = 0.0;
  std::optional<double> test_accuracy;  // of the best parameters, when a test split exists
  std::filesystem::path best_checkpoint;  // empty when training was not persisted
};

void to_json(nlohmann::json& j, const TrainReport& r);

struct TrainOptions {
  // When set, the best-by-validation checkpoint is written to
  // `<output>/checkpoint` and the report to `<output>/train_report.json`.
  std::optional<std::filesystem::path> output;
  PreprocessConfig preprocessing;
  std::function<void(const EpochEntry&)> on_epoch;
};

// Runs exactly config.epochs epochs of mini-batch ranking-loss descent. Each
// batch scores the union of its images in one forward pass with shared
// weights. On return the model holds the best-by-validation parameters
// (ties go to the earlier epoch) and is in inference mode.
TrainReport train(ScoringModel& model, const DatasetSplit& split, const TrainConfig& config,
                  const ImageSource& images, const TrainOptions& options = {});

// Pairwise accuracy without touching parameters or the train/eval flag.
double evaluate(const ScoringModel& model, const std::vector<Comparison>& comparisons,
                const ImageSource& images);

}  // namespace streetcam
