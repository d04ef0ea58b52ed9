#include "memeforge/annotate_server.hpp"

#include "json.hpp"
#include "memeforge/error.hpp"
#include "memeforge/image_io.hpp"
#include "memeforge/store.hpp"

// Last: <resolv.h> defines a `_res` macro that collides with Eigen.
#include "httplib.h"

namespace memeforge {

using json = nlohmann::json;

namespace {

constexpr const char* kFallbackPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>memeforge annotation</title></head>
<body>
<h1>memeforge annotation service</h1>
<p>The annotation UI is not installed. API endpoints:</p>
<ul>
<li>GET /api/tasks/next?annotator=ID</li>
<li>POST /api/judgments</li>
<li>GET /api/agreement</li>
<li>GET /api/export</li>
<li>GET /api/images/ID</li>
</ul>
</body></html>
)";

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownTask:
    case ErrorCode::UnknownId: return 404;
    case ErrorCode::UnknownAnnotator: return 403;
    case ErrorCode::InsufficientJudgments: return 409;
    case ErrorCode::MalformedVerdict:
    case ErrorCode::InvalidArgument: return 400;
    default: return 500;
  }
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", code}, {"message", message}}.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, status_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

std::string_view content_type(ImageFormat format) {
  switch (format) {
    case ImageFormat::png: return "image/png";
    case ImageFormat::jpeg: return "image/jpeg";
    case ImageFormat::gif: return "image/gif";
    case ImageFormat::unknown: break;
  }
  return "application/octet-stream";
}

}  // namespace

struct AnnotateServer::Impl {
  httplib::Server server;
};

AnnotateServer::AnnotateServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>()) {
  auto& srv = impl_->server;
  srv.Get("/api/tasks/next", guarded([&service](const httplib::Request& req, httplib::Response& res) {
            if (!req.has_param("annotator")) throw Error(ErrorCode::InvalidArgument, "annotator parameter missing");
            const std::string annotator = req.get_param_value("annotator");
            const auto task = service.next_task(annotator);
            json out{{"done", !task.has_value()},
                     {"progress", {{"judged", service.judged_count(annotator)}, {"total", service.tasks().size()}}}};
            if (task) out["task"] = json::parse(task_to_json(*task));
            res.set_content(out.dump(), "application/json");
          }));
  srv.Post("/api/judgments", guarded([&service](const httplib::Request& req, httplib::Response& res) {
             Judgment j = judgment_from_json(req.body);
             const int task_id = j.task_id;
             service.submit(std::move(j));
             res.set_content(json{{"ok", true}, {"task_id", task_id}}.dump(), "application/json");
           }));
  srv.Get("/api/agreement", guarded([&service](const httplib::Request&, httplib::Response& res) {
            const auto a = service.agreement();
            auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
            res.set_content(json{{"fleiss_kappa_verdicts", opt(a.fleiss_kappa_verdicts)},
                                 {"fleiss_kappa_templated", opt(a.fleiss_kappa_templated)},
                                 {"n_complete_items", a.n_complete_items},
                                 {"raters", a.raters}}
                                .dump(),
                            "application/json");
          }));
  srv.Get("/api/export", guarded([&service](const httplib::Request&, httplib::Response& res) {
            res.set_content(service.export_ground_truth(), "application/x-ndjson");
          }));
  srv.Get(R"(/api/images/(.+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
            const ImageRecord& record = service.image(req.matches[1].str());
            const auto type = content_type(sniff_format(record.path));
            std::string bytes = read_file(record.path);
            res.set_content(std::move(bytes), std::string(type));
          }));
  if (static_dir && std::filesystem::is_directory(*static_dir)) {
    srv.set_mount_point("/", static_dir->string());
  } else {
    srv.Get("/", [](const httplib::Request&, httplib::Response& res) { res.set_content(kFallbackPage, "text/html"); });
  }
}

AnnotateServer::~AnnotateServer() { stop(); }

int AnnotateServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void AnnotateServer::listen() { impl_->server.listen_after_bind(); }

void AnnotateServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace memeforge
