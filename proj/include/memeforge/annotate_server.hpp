#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "memeforge/annotate.hpp"

namespace memeforge {

/// HTTP front of an AnnotationService:
///   GET  /api/tasks/next?annotator=<id>
///   POST /api/judgments
///   GET  /api/agreement
///   GET  /api/export
///   GET  /api/images/<id>
/// and the annotation UI (or a minimal fallback page) at `/`.
class AnnotateServer {
 public:
  explicit AnnotateServer(AnnotationService& service,
                          std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~AnnotateServer();
  AnnotateServer(const AnnotateServer&) = delete;
  AnnotateServer& operator=(const AnnotateServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port; throws IoError.
  int bind(const std::string& host, int port);
  /// Serves until stop().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace memeforge
