#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "filtrank/annotation.hpp"
#include "filtrank/trainer.hpp"

namespace filtrank {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 = pick a free port
  /// Pre-rendered <dir>/<ref_id>/<filter>.png; missing files are rendered on demand.
  std::filesystem::path filtered_dir;
  /// Enables /api/recommend.
  std::optional<std::filesystem::path> model_path;
};

/// JSON-over-HTTP front end for an AnnotationService:
///   GET  /api/hit                 open a HIT (?annotator= optional)
///   GET  /api/image/{ref}/{filter} PNG ("original" for the reference)
///   POST /api/hit/{id}            submit answers
///   GET  /api/progress            queue counts
///   GET  /api/recommend?ref=&k=   top-K ranking from the loaded model
/// Errors are {"error": code, "message": text} with a 4xx/5xx status.
class HttpServer {
 public:
  HttpServer(AnnotationService& service, ServerOptions opt);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and returns the port; throws IOFailure.
  int bind();
  /// Serves until stop(); call bind() first.
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace filtrank
