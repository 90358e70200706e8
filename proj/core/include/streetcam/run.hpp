#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "streetcam/analysis.hpp"
#include "streetcam/saliency.hpp"

namespace streetcam {

// A run directory ties ranked extremes, their saliency renders and the
// annotation store together:
//
//   run.json                         {run_id, method, k, attributes: [...]}
//   extremes/<attribute>.json        {attribute, model, k, top, bottom}
//   saliency/<attribute>/<image_id>/ original.png, <method>_<sign>_overlay.png,
//                                    <method>_<sign>_heatmap.png, <method>_<sign>.json
//   annotations.jsonl                append-only AnnotationRecords
struct RunAttribute {
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  std::string model;
  std::string checkpoint;
  Extremes extremes;
};

struct Run {
  std::filesystem::path directory;
  std::string run_id;
  SaliencyMethod method = SaliencyMethod::gradcam;
  int k = 50;
  std::vector<RunAttribute> attributes;
};

// Top-ranked images are explained with +f, bottom-ranked with -f.
TargetSign sign_for(Polarity polarity);

std::string overlay_filename(SaliencyMethod method, TargetSign sign);
std::string heatmap_filename(SaliencyMethod method, TargetSign sign);
std::string sidecar_filename(SaliencyMethod method, TargetSign sign);
inline constexpr const char* kOriginalFilename = "original.png";

std::filesystem::path saliency_dir(const std::filesystem::path& run_dir, PerceptualAttribute attribute,
                                   const std::string& image_id);
std::filesystem::path store_path(const std::filesystem::path& run_dir);

Run load_run(const std::filesystem::path& directory);
void save_run(const Run& run);

// Adds or replaces the attribute's extremes in the run at `directory`,
// creating run.json when absent.
Run upsert_run_attribute(const std::filesystem::path& directory, const std::string& run_id,
                         SaliencyMethod method, int k, RunAttribute attribute);

}  // namespace streetcam
