#include "streetcam/annotation_service.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <mutex>
#include <set>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace fs = std::filesystem;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buffer[32];
  std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buffer;
}

std::size_t Session::done() const {
  std::size_t n = 0;
  for (const auto& t : tasks) n += t.status == TaskStatus::done;
  return n;
}

void to_json(nlohmann::json& j, const AnnotationTask& t) {
  j = {{"task_id", t.task_id},
       {"image_id", t.image_id},
       {"attribute", to_string(t.attribute)},
       {"polarity", to_string(t.polarity)},
       {"model", t.model},
       {"method", to_string(t.method)},
       {"sign", to_string(t.sign)},
       {"rank", t.rank},
       {"overlay_url", t.overlay_url},
       {"original_url", t.original_url},
       {"status", t.status == TaskStatus::done ? "done" : "pending"}};
}

void to_json(nlohmann::json& j, const Session& s) {
  j = {{"session_id", s.session_id},
       {"annotator_id", s.annotator_id},
       {"run_id", s.run_id},
       {"progress", {{"done", s.done()}, {"total", s.total()}}},
       {"tasks", s.tasks}};
}

std::vector<AnnotationTask> build_tasks(const Run& run) {
  std::vector<AnnotationTask> tasks;
  std::vector<std::string> missing;
  for (const auto& a : run.attributes) {
    for (auto polarity : {Polarity::high, Polarity::low}) {
      const auto& list = polarity == Polarity::high ? a.extremes.top : a.extremes.bottom;
      const auto sign = sign_for(polarity);
      for (std::size_t i = 0; i < list.size(); ++i) {
        AnnotationTask task;
        task.image_id = list[i].image_id;
        task.attribute = a.attribute;
        task.polarity = polarity;
        task.model = a.model;
        task.method = run.method;
        task.sign = sign;
        task.rank = static_cast<int>(i + 1);
        task.task_id = to_string(a.attribute) + "-" + to_string(polarity) + "-" + std::to_string(i + 1);
        const auto overlay = overlay_filename(run.method, sign);
        if (!fs::exists(saliency_dir(run.directory, a.attribute, task.image_id) / overlay)) {
          missing.push_back(task.image_id + " (" + to_string(a.attribute) + ", " + overlay + ")");
        }
        const std::string query = "?attribute=" + to_string(a.attribute);
        task.overlay_url = "/media/" + task.image_id + "/" + overlay + query;
        task.original_url = "/media/" + task.image_id + "/" + kOriginalFilename + query;
        tasks.push_back(std::move(task));
      }
    }
  }
  if (!missing.empty()) throw NotFoundError("missing saliency overlays for: " + join(missing));
  return tasks;
}

AnnotationService::AnnotationService(Run run, Clock clock)
    : run_(std::move(run)),
      clock_(clock ? std::move(clock) : Clock(utc_timestamp)),
      store_(store_path(run_.directory)),
      records_(store_.load()) {}

Session AnnotationService::create_session(const std::string& annotator_id, const std::string& run_id) {
  if (annotator_id.empty()) throw ValidationError("annotator_id is required");
  if (run_id != run_.run_id) {
    throw NotFoundError("unknown run '" + run_id + "' (this service hosts '" + run_.run_id + "')");
  }
  auto tasks = build_tasks(run_);

  std::unique_lock lock(mutex_);
  std::set<std::string> submitted;
  for (const auto& r : records_) {
    if (r.annotator_id == annotator_id) submitted.insert(r.task_id);
  }
  for (auto& t : tasks) {
    if (submitted.count(t.task_id)) t.status = TaskStatus::done;
  }
  Session session{"s" + std::to_string(next_session_++), annotator_id, run_id, std::move(tasks)};
  sessions_[session.session_id] = session;
  return session;
}

Session AnnotationService::session(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  return it->second;
}

std::optional<AnnotationTask> AnnotationService::next_task(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  for (const auto& t : it->second.tasks) {
    if (t.status == TaskStatus::pending) return t;
  }
  return std::nullopt;
}

AnnotationRecord AnnotationService::submit(const std::string& session_id, const std::string& task_id,
                                           const std::vector<std::string>& labels, bool empty_flag) {
  auto normalized = normalize_labels(labels);
  if (normalized.empty() && !empty_flag) {
    throw ValidationError("no labels given; set the empty flag to record 'no identifiable object'");
  }
  if (!normalized.empty() && empty_flag) {
    throw ValidationError("the empty flag cannot be combined with labels");
  }

  std::unique_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + session_id + "'");
  auto& session = it->second;
  auto task = std::find_if(session.tasks.begin(), session.tasks.end(),
                           [&](const AnnotationTask& t) { return t.task_id == task_id; });
  if (task == session.tasks.end()) {
    throw NotFoundError("unknown task '" + task_id + "' in session '" + session_id + "'");
  }
  if (task->status == TaskStatus::done) {
    throw ConflictError("task '" + task_id + "' was already submitted");
  }

  AnnotationRecord record;
  record.task_id = task->task_id;
  record.image_id = task->image_id;
  record.attribute = task->attribute;
  record.polarity = task->polarity;
  record.model = task->model;
  record.annotator_id = session.annotator_id;
  record.labels = std::move(normalized);
  record.timestamp = clock_();

  store_.append(record);
  records_.push_back(record);
  task->status = TaskStatus::done;
  return record;
}

TallyResult AnnotationService::get_tally(const TallyFilter& filter) const {
  std::vector<AnnotationRecord> selected;
  {
    std::shared_lock lock(mutex_);
    for (const auto& r : records_) {
      if (filter.attribute && r.attribute != *filter.attribute) continue;
      if (filter.polarity && r.polarity != *filter.polarity) continue;
      if (filter.model && r.model != *filter.model) continue;
      selected.push_back(r);
    }
  }
  return tally(selected);
}

std::vector<AnnotationRecord> AnnotationService::records() const {
  std::shared_lock lock(mutex_);
  return records_;
}

fs::path AnnotationService::media_path(const std::string& image_id, const std::string& file,
                                       std::optional<PerceptualAttribute> attribute) const {
  if (image_id.find("..") != std::string::npos || image_id.find('/') != std::string::npos ||
      file.find("..") != std::string::npos || file.find('/') != std::string::npos) {
    throw ValidationError("invalid media path");
  }
  std::vector<fs::path> candidates;
  for (const auto& a : run_.attributes) {
    if (attribute && a.attribute != *attribute) continue;
    auto path = saliency_dir(run_.directory, a.attribute, image_id) / file;
    if (fs::exists(path)) candidates.push_back(path);
  }
  if (candidates.empty()) throw NotFoundError("no media '" + file + "' for image '" + image_id + "'");
  if (candidates.size() > 1 && file != kOriginalFilename) {
    throw ValidationError("image '" + image_id + "' has '" + file +
                          "' under several attributes; pass ?attribute=");
  }
  return candidates.front();
}

}  // namespace streetcam
