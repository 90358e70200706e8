#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "streetcam/dataset.hpp"
#include "streetcam/ranking_model.hpp"

namespace streetcam {

// On-disk model: `<dir>/model.pt` (libtorch archive of parameters and
// buffers) plus `<dir>/manifest.json`:
//   {backbone_kind, backbone, attribute, preprocessing, training, epoch}
struct Checkpoint {
  ScoringModel model;
  PreprocessConfig preprocessing;
  nlohmann::json training;
  int epoch = 0;
  std::filesystem::path directory;
};

void save_checkpoint(const ScoringModel& model, const PreprocessConfig& preprocessing,
                     const nlohmann::json& training, int epoch,
                     const std::filesystem::path& directory);

Checkpoint load_checkpoint(const std::filesystem::path& directory);

// A short model reference, "<kind>-<attribute>-<name>", where name is the
// checkpoint directory (or the training output directory above it).
std::string checkpoint_reference(const Checkpoint& checkpoint);

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

struct WeightImport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;     // model tensors absent from the file
  std::vector<std::string> unexpected;  // file tensors the model does not have
};

// Copies tensors from a `torch.save`d {name: tensor} dictionary (as written by
// tools/convert_torchvision_weights.py) into matching backbone parameters and
// buffers. Shape mismatches throw ValidationError.
WeightImport import_weights(Backbone& backbone, const std::filesystem::path& path);

}  // namespace streetcam
