#pragma once

#include <filesystem>
#include <mutex>
#include <vector>

#include "streetcam/analysis.hpp"

namespace streetcam {

// Append-only JSON-lines file of AnnotationRecords, one per line. Each append
// is a single write followed by fsync, so a crash can only lose the record in
// flight. Opening the store drops a trailing partial line left by such a crash.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path);

  void append(const AnnotationRecord& record);
  std::vector<AnnotationRecord> load() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
};

// Parses every complete line; a trailing line without newline is ignored.
// A malformed complete line throws ValidationError naming the line number.
std::vector<AnnotationRecord> replay_store(const std::filesystem::path& path);

}  // namespace streetcam
