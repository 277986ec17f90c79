#include "filtrank/server.hpp"

#include <httplib.h>

#include "filtrank/error.hpp"
#include "filtrank/evaluation.hpp"
#include "filtrank/image.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace filtrank {

namespace {

int status_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownHit:
    case ErrorCode::MissingFile:
    case ErrorCode::UnknownFilter: return 404;
    case ErrorCode::AlreadyClosed: return 409;
    case ErrorCode::InsufficientPendingPairs: return 503;
    case ErrorCode::ConfigError:
    case ErrorCode::UsageError: return 400;
    default: return 500;
  }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, {{"error", code}, {"message", message}}, status);
}

}  // namespace

struct HttpServer::Impl {
  Impl(AnnotationService& s, ServerOptions o) : service(s), opt(std::move(o)) {}

  AnnotationService& service;
  ServerOptions opt;
  std::optional<TrainedModel> model;
  httplib::Server http;

  const ReferenceImage* find_ref(std::string_view id) const {
    for (const auto& r : service.references()) {
      if (r.id == id) return &r;
    }
    return nullptr;
  }

  template <typename F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      send_error(res, status_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  }

  void routes() {
    http.Get("/api/hit", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, hit_to_client_json(service.open_hit(req.get_param_value("annotator")))); });
    });

    http.Post("/api/hit/:id", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        json body;
        try {
          body = json::parse(req.body);
        } catch (const json::exception& e) {
          throw Error(ErrorCode::ConfigError, std::string("body is not JSON: ") + e.what());
        }
        body["hit_id"] = req.path_params.at("id");
        send_json(res, to_json(service.submit(submission_from_json(body))));
      });
    });

    http.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, to_json(service.progress())); });
    });

    http.Get("/api/image/:ref/:filter", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto& ref_id = req.path_params.at("ref");
        const auto& name = req.path_params.at("filter");
        const ReferenceImage* ref = find_ref(ref_id);
        if (!ref) throw Error(ErrorCode::MissingFile, "unknown reference " + ref_id);
        std::vector<std::uint8_t> png;
        if (name == "original") {
          png = encode_png(load_image(ref->path));
        } else {
          const FilterId f = filter_by_name(name);
          const fs::path cached = opt.filtered_dir / ref_id / (std::string(f.name()) + ".png");
          if (!opt.filtered_dir.empty() && fs::exists(cached)) png = encode_png(load_image(cached));
          else png = encode_png(apply_filter(load_image(ref->path), f));
        }
        res.set_content(std::string(png.begin(), png.end()), "image/png");
      });
    });

    http.Get("/api/recommend", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        if (!model) throw Error(ErrorCode::MissingFile, "server started without a model");
        if (!req.has_param("ref")) throw Error(ErrorCode::UsageError, "missing ref parameter");
        int k = 5;
        if (req.has_param("k")) {
          try {
            k = std::stoi(req.get_param_value("k"));
          } catch (const std::exception&) {
            throw Error(ErrorCode::UsageError, "k must be an integer");
          }
        }
        if (k < 1 || k > kNumFilters) throw Error(ErrorCode::UsageError, "k must be in [1, 22]");
        const auto ref_id = req.get_param_value("ref");
        const ReferenceImage* ref = find_ref(ref_id);
        if (!ref) throw Error(ErrorCode::MissingFile, "unknown reference " + ref_id);
        auto ranking = rank_filters(*model, load_image(ref->path), ref_id);
        ranking.entries.resize(static_cast<std::size_t>(k));
        send_json(res, to_json(ranking));
      });
    });
  }
};

HttpServer::HttpServer(AnnotationService& service, ServerOptions opt)
    : impl_(std::make_unique<Impl>(service, std::move(opt))) {
  if (impl_->opt.model_path) impl_->model = load_trained_model(*impl_->opt.model_path);
  impl_->routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  auto& o = impl_->opt;
  if (o.port == 0) {
    const int p = impl_->http.bind_to_any_port(o.host);
    if (p < 0) throw Error(ErrorCode::IOFailure, "cannot bind " + o.host);
    return o.port = p;
  }
  if (!impl_->http.bind_to_port(o.host, o.port)) {
    throw Error(ErrorCode::IOFailure, "cannot bind " + o.host + ":" + std::to_string(o.port));
  }
  return o.port;
}

void HttpServer::serve() { impl_->http.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace filtrank
