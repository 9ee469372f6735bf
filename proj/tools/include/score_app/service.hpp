#pragma once

#include <memory>
#include <string>

#include "score_app/run_store.hpp"

namespace httplib {
class Server;
}

namespace score::app {

/// JSON/HTTP front for review bundles and selections.
///
///   GET  /api/runs                       run ids
///   GET  /api/runs/{id}/manifest         manifest.json, byte for byte
///   GET  /api/runs/{id}/images/{file}    PPM/PGM
///   GET  /api/runs/{id}/selections       current selection and revision
///   POST /api/runs/{id}/selections       {sample_ids, class_id?, source?} -> 201 {revision}
class AnnotationService {
 public:
  explicit AnnotationService(RunStore& store);
  ~AnnotationService();

  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  // Port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  bool listen_after_bind();
  void stop();
  bool running() const;

  httplib::Server& server() { return *server_; }

 private:
  void routes();

  RunStore& store_;
  std::unique_ptr<httplib::Server> server_;
};

// Content type for a served image file name.
std::string image_content_type(const std::string& file);

}  // namespace score::app
