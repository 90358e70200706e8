#include "streetcam/run.hpp"

#include <fstream>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace fs = std::filesystem;

namespace {

nlohmann::json entries_json(const std::vector<RankedEntry>& entries) {
  auto out = nlohmann::json::array();
  for (const auto& e : entries) out.push_back({{"image_id", e.image_id}, {"score", e.score}});
  return out;
}

std::vector<RankedEntry> entries_from(const nlohmann::json& j) {
  std::vector<RankedEntry> out;
  for (const auto& e : j) out.push_back({e.at("image_id").get<std::string>(), e.at("score").get<double>()});
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw Error("failed to write " + path.string());
}

}  // namespace

TargetSign sign_for(Polarity polarity) {
  return polarity == Polarity::high ? TargetSign::positive : TargetSign::negative;
}

std::string overlay_filename(SaliencyMethod method, TargetSign sign) {
  return to_string(method) + "_" + to_string(sign) + "_overlay.png";
}

std::string heatmap_filename(SaliencyMethod method, TargetSign sign) {
  return to_string(method) + "_" + to_string(sign) + "_heatmap.png";
}

std::string sidecar_filename(SaliencyMethod method, TargetSign sign) {
  return to_string(method) + "_" + to_string(sign) + ".json";
}

fs::path saliency_dir(const fs::path& run_dir, PerceptualAttribute attribute, const std::string& image_id) {
  return run_dir / "saliency" / to_string(attribute) / image_id;
}

fs::path store_path(const fs::path& run_dir) { return run_dir / "annotations.jsonl"; }

Run load_run(const fs::path& directory) {
  auto manifest = read_json(directory / "run.json");
  Run run;
  run.directory = directory;
  run.run_id = manifest.at("run_id").get<std::string>();
  run.method = parse_saliency_method(manifest.at("method").get<std::string>());
  run.k = manifest.at("k").get<int>();
  for (const auto& a : manifest.at("attributes")) {
    RunAttribute attribute;
    attribute.attribute = parse_attribute(a.at("attribute").get<std::string>());
    auto extremes = read_json(directory / "extremes" / (to_string(attribute.attribute) + ".json"));
    attribute.model = extremes.at("model").get<std::string>();
    attribute.checkpoint = a.value("checkpoint", "");
    attribute.extremes.top = entries_from(extremes.at("top"));
    attribute.extremes.bottom = entries_from(extremes.at("bottom"));
    run.attributes.push_back(std::move(attribute));
  }
  return run;
}

void save_run(const Run& run) {
  nlohmann::json manifest = {{"run_id", run.run_id},
                             {"method", to_string(run.method)},
                             {"k", run.k},
                             {"attributes", nlohmann::json::array()}};
  for (const auto& a : run.attributes) {
    manifest["attributes"].push_back(
        {{"attribute", to_string(a.attribute)}, {"model", a.model}, {"checkpoint", a.checkpoint}});
    write_json(run.directory / "extremes" / (to_string(a.attribute) + ".json"),
               {{"attribute", to_string(a.attribute)},
                {"model", a.model},
                {"k", run.k},
                {"top", entries_json(a.extremes.top)},
                {"bottom", entries_json(a.extremes.bottom)}});
  }
  write_json(run.directory / "run.json", manifest);
}

Run upsert_run_attribute(const fs::path& directory, const std::string& run_id, SaliencyMethod method,
                         int k, RunAttribute attribute) {
  Run run;
  if (fs::exists(directory / "run.json")) {
    run = load_run(directory);
    if (run.method != method || run.k != k) {
      throw ValidationError("run " + directory.string() + " was created with method " +
                            to_string(run.method) + " and k=" + std::to_string(run.k));
    }
  } else {
    run.directory = directory;
    run.run_id = run_id;
    run.method = method;
    run.k = k;
  }
  bool replaced = false;
  for (auto& a : run.attributes) {
    if (a.attribute == attribute.attribute) {
      a = attribute;
      replaced = true;
    }
  }
  if (!replaced) run.attributes.push_back(std::move(attribute));
  save_run(run);
  return run;
}

}  // namespace streetcam
