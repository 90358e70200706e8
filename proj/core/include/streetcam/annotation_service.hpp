#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "streetcam/analysis.hpp"
#include "streetcam/annotation_store.hpp"
#include "streetcam/run.hpp"

namespace streetcam {

enum class TaskStatus { pending, done };

struct AnnotationTask {
  std::string task_id;
  std::string image_id;
  PerceptualAttribute attribute = PerceptualAttribute::safety;
  Polarity polarity = Polarity::high;
  std::string model;
  SaliencyMethod method = SaliencyMethod::gradcam;
  TargetSign sign = TargetSign::positive;
  int rank = 0;  // 1-based position within its extremes list
  std::string overlay_url;
  std::string original_url;
  TaskStatus status = TaskStatus::pending;
};

struct Session {
  std::string session_id;
  std::string annotator_id;
  std::string run_id;
  std::vector<AnnotationTask> tasks;  // order fixed at creation

  std::size_t done() const;
  std::size_t total() const { return tasks.size(); }
};

void to_json(nlohmann::json& j, const AnnotationTask& t);
void to_json(nlohmann::json& j, const Session& s);

// One pending task per (image, attribute, polarity) of the run, ordered by
// attribute (run order), polarity (high first) and rank. Throws NotFoundError
// listing every image whose overlay is missing on disk.
std::vector<AnnotationTask> build_tasks(const Run& run);

struct TallyFilter {
  std::optional<PerceptualAttribute> attribute;
  std::optional<Polarity> polarity;
  std::optional<std::string> model;
};

// Annotation sessions over one run directory. Reads may run concurrently;
// submissions are serialised through the store's single writer.
class AnnotationService {
 public:
  using Clock = std::function<std::string()>;

  explicit AnnotationService(Run run, Clock clock = {});

  const Run& run() const { return run_; }

  // Tasks the annotator already submitted (per the store) start as done, so a
  // new session resumes where the last one stopped.
  Session create_session(const std::string& annotator_id, const std::string& run_id);
  Session session(const std::string& session_id) const;
  // nullopt once every task is done.
  std::optional<AnnotationTask> next_task(const std::string& session_id) const;
  // Normalises and deduplicates labels; an empty set needs `empty_flag`.
  AnnotationRecord submit(const std::string& session_id, const std::string& task_id,
                          const std::vector<std::string>& labels, bool empty_flag);
  TallyResult get_tally(const TallyFilter& filter = {}) const;
  std::vector<AnnotationRecord> records() const;

  // Resolves /media/<image_id>/<file>; `attribute` disambiguates images that
  // appear under several attributes.
  std::filesystem::path media_path(const std::string& image_id, const std::string& file,
                                   std::optional<PerceptualAttribute> attribute) const;

 private:
  Run run_;
  Clock clock_;
  AnnotationStore store_;
  mutable std::shared_mutex mutex_;
  std::vector<AnnotationRecord> records_;
  std::map<std::string, Session> sessions_;
  std::size_t next_session_ = 1;
};

std::string utc_timestamp();

}  // namespace streetcam
