#include "streetcam/annotation_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace fs = std::filesystem;

namespace {

void drop_partial_tail(const fs::path& path) {
  if (!fs::exists(path)) return;
  const auto size = fs::file_size(path);
  if (size == 0) return;
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (content.back() == '\n') return;
  const auto last_newline = content.find_last_of('\n');
  fs::resize_file(path, last_newline == std::string::npos ? 0 : last_newline + 1);
}

}  // namespace

AnnotationStore::AnnotationStore(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  drop_partial_tail(path_);
}

void AnnotationStore::append(const AnnotationRecord& record) {
  const std::string line = nlohmann::json(record).dump() + "\n";
  std::lock_guard lock(mutex_);
  int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("cannot open annotation store " + path_.string() + ": " + std::strerror(errno));
  std::size_t written = 0;
  while (written < line.size()) {
    auto n = ::write(fd, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string reason = std::strerror(errno);
      ::close(fd);
      throw Error("write to annotation store failed: " + reason);
    }
    written += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

std::vector<AnnotationRecord> AnnotationStore::load() const {
  std::lock_guard lock(mutex_);
  return replay_store(path_);
}

std::vector<AnnotationRecord> replay_store(const fs::path& path) {
  std::vector<AnnotationRecord> records;
  std::ifstream in(path, std::ios::binary);
  if (!in) return records;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < content.size()) {
    const auto end = content.find('\n', start);
    if (end == std::string::npos) break;  // partial tail from an interrupted write
    ++line_no;
    const std::string line = content.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<AnnotationRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace streetcam
