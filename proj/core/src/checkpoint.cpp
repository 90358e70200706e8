#include "streetcam/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include <torch/serialize.h>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
  j = {{"side", c.side}, {"mean", c.mean}, {"std", c.std}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
  c.side = j.at("side");
  c.mean = j.at("mean").get<std::array<float, 3>>();
  c.std = j.at("std").get<std::array<float, 3>>();
}

void save_checkpoint(const ScoringModel& model, const PreprocessConfig& preprocessing,
                     const nlohmann::json& training, int epoch, const fs::path& directory) {
  fs::create_directories(directory);
  torch::serialize::OutputArchive archive;
  model.backbone().save(archive);
  archive.save_to((directory / "model.pt").string());

  nlohmann::json manifest = {
      {"backbone_kind", to_string(model.kind())},
      {"backbone", model.config()},
      {"attribute", to_string(model.attribute())},
      {"preprocessing", preprocessing},
      {"training", training},
      {"epoch", epoch},
      {"dtype", model.dtype() == torch::kDouble ? "float64" : "float32"},
  };
  std::ofstream out(directory / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw Error("failed writing checkpoint manifest in " + directory.string());
}

Checkpoint load_checkpoint(const fs::path& directory) {
  const auto manifest_path = directory / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw NotFoundError("no checkpoint manifest at " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }

  auto config = manifest.at("backbone").get<BackboneConfig>();
  ScoringModel model(config, parse_attribute(manifest.at("attribute").get<std::string>()));
  if (manifest.value("dtype", "float32") == "float64") model.to(torch::kDouble);
  torch::serialize::InputArchive archive;
  archive.load_from((directory / "model.pt").string());
  model.backbone().load(archive);
  model.backbone().eval();

  return Checkpoint{model, manifest.at("preprocessing").get<PreprocessConfig>(),
                    manifest.value("training", nlohmann::json::object()),
                    manifest.value("epoch", 0), directory};
}

std::string checkpoint_reference(const Checkpoint& checkpoint) {
  auto dir = fs::absolute(checkpoint.directory).lexically_normal();
  if (dir.filename().empty()) dir = dir.parent_path();
  // Training writes <out>/checkpoint; the output directory is the better name.
  if (dir.filename() == "checkpoint" && dir.has_parent_path()) dir = dir.parent_path();
  const auto name = dir.filename().string();
  return to_string(checkpoint.model.kind()) + "-" + to_string(checkpoint.model.attribute()) + "-" + name;
}

WeightImport import_weights(Backbone& backbone, const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open weights file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto value = torch::pickle_load(bytes);
  if (!value.isGenericDict()) throw ValidationError(path.string() + " is not a {name: tensor} dictionary");

  std::unordered_map<std::string, torch::Tensor> file;
  for (const auto& entry : value.toGenericDict()) {
    if (entry.value().isTensor()) file.emplace(entry.key().toStringRef(), entry.value().toTensor());
  }

  WeightImport report;
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& target) {
    auto it = file.find(name);
    if (it == file.end()) {
      report.missing.push_back(name);
      return;
    }
    if (it->second.sizes() != target.sizes()) {
      throw ValidationError("weights for '" + name + "' have shape " + c10::str(it->second.sizes()) +
                            ", model expects " + c10::str(target.sizes()));
    }
    target.copy_(it->second.to(target.scalar_type()));
    report.loaded.push_back(name);
    file.erase(it);
  };
  for (auto& p : backbone.named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : backbone.named_buffers()) copy_into(b.key(), b.value());
  for (const auto& [name, tensor] : file) report.unexpected.push_back(name);
  std::sort(report.unexpected.begin(), report.unexpected.end());
  return report;
}

}  // namespace streetcam
