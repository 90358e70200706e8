#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "streetcam/annotation_service.hpp"

namespace streetcam {

// JSON-over-HTTP front end for an AnnotationService:
//
//   POST /sessions                       {annotator_id, run_id} -> Session
//   GET  /sessions/{id}                  -> Session
//   GET  /sessions/{id}/next             -> AnnotationTask | {done: true}
//   POST /sessions/{id}/tasks/{task_id}  {labels: [...], empty: bool} -> AnnotationRecord
//   GET  /tally?attribute=&polarity=&model=  -> {tables, warnings}
//   GET  /media/{image_id}/{file}[?attribute=]
//
// Errors come back as {"error": message} with 400 (validation), 404
// (unknown session/task/media), 409 (resubmission) or 500.
class AnnotationHttpServer {
 public:
  explicit AnnotationHttpServer(AnnotationService& service,
                                std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~AnnotationHttpServer();
  AnnotationHttpServer(const AnnotationHttpServer&) = delete;
  AnnotationHttpServer& operator=(const AnnotationHttpServer&) = delete;

  // Blocks until stop().
  bool listen(const std::string& host, int port);
  // Binds an ephemeral port and returns it; then call listen_after_bind().
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace streetcam
