#include "score_app/service.hpp"

#include <httplib.h>

#include "score/errors.hpp"
#include "score/serialize.hpp"

namespace score::app {
namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump() + "\n", "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::vector<std::int64_t>& offending = {}) {
  nlohmann::json body{{"error", message}};
  if (status == 422) body["offending_ids"] = offending;
  send_json(res, status, body);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string image_content_type(const std::string& file) {
  if (ends_with(file, ".ppm")) return "image/x-portable-pixmap";
  if (ends_with(file, ".pgm")) return "image/x-portable-graymap";
  return "application/octet-stream";
}

AnnotationService::AnnotationService(RunStore& store) : store_(store), server_(std::make_unique<httplib::Server>()) {
  routes();
}

AnnotationService::~AnnotationService() { stop(); }

void AnnotationService::routes() {
  auto& s = *server_;
  s.Get("/api/runs", [this](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"runs", store_.list_runs()}});
  });

  s.Get(R"(/api/runs/([^/]+)/manifest)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store_.has_run(id)) return send_error(res, 404, "unknown run '" + id + "'");
    res.status = 200;
    res.set_content(store_.manifest_bytes(id), "application/json");
  });

  s.Get(R"(/api/runs/([^/]+)/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const std::string file = req.matches[2];
    if (!store_.has_run(id)) return send_error(res, 404, "unknown run '" + id + "'");
    try {
      res.status = 200;
      res.set_content(read_file(store_.image_path(id, file)), image_content_type(file));
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    }
  });

  s.Get(R"(/api/runs/([^/]+)/selections)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store_.has_run(id)) return send_error(res, 404, "unknown run '" + id + "'");
    const auto current = store_.selection(id);
    if (!current) return send_json(res, 200, {{"run_id", id}, {"revision", 0}, {"sample_ids", nlohmann::json::array()}});
    send_json(res, 200,
              {{"run_id", id},
               {"revision", current->revision},
               {"class_id", current->selection.class_id},
               {"source", to_string(current->selection.source)},
               {"sample_ids", current->selection.sample_ids}});
  });

  s.Post(R"(/api/runs/([^/]+)/selections)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    if (!store_.has_run(id)) return send_error(res, 404, "unknown run '" + id + "'");
    Selection sel;
    try {
      const auto body = nlohmann::json::parse(req.body);
      const auto run = store_.load_run(id);
      sel.run_id = run.run_id;
      sel.class_id = body.value("class_id", run.class_id);
      sel.sample_ids = body.at("sample_ids").get<std::vector<std::int64_t>>();
      sel.source = selection_source_from_string(body.value("source", std::string("human")));
    } catch (const std::exception& e) {
      return send_error(res, 422, std::string("malformed selection: ") + e.what());
    }
    try {
      const auto stored = store_.put_selection(id, sel);
      send_json(res, 201, {{"run_id", id}, {"revision", stored.revision}, {"sample_ids", stored.selection.sample_ids}});
    } catch (const SelectionError& e) {
      send_error(res, 422, e.what(), e.offending_ids());
    }
  });

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    } catch (...) {
      send_error(res, 500, "internal error");
    }
  });
}

int AnnotationService::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

bool AnnotationService::listen_after_bind() { return server_->listen_after_bind(); }

void AnnotationService::stop() {
  if (server_) server_->stop();
}

bool AnnotationService::running() const { return server_->is_running(); }

}  // namespace score::app
