#include "streetcam/http_server.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>

#include "streetcam/errors.hpp"

namespace streetcam {

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    auto body = json::parse(req.body);
    if (!body.is_object()) throw ValidationError("request body must be a JSON object");
    return body;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

std::optional<std::string> query(const httplib::Request& req, const std::string& key) {
  if (!req.has_param(key)) return std::nullopt;
  auto value = req.get_param_value(key);
  if (value.empty()) return std::nullopt;
  return value;
}

template <typename Handler>
httplib::Server::Handler guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const ValidationError& e) {
      send_json(res, {{"error", e.what()}}, 400);
    } catch (const NotFoundError& e) {
      send_json(res, {{"error", e.what()}}, 404);
    } catch (const ConflictError& e) {
      send_json(res, {{"error", e.what()}}, 409);
    } catch (const json::exception& e) {
      send_json(res, {{"error", e.what()}}, 400);
    } catch (const std::exception& e) {
      send_json(res, {{"error", e.what()}}, 500);
    }
  };
}

}  // namespace

struct AnnotationHttpServer::Impl {
  AnnotationService& service;
  httplib::Server server;
  explicit Impl(AnnotationService& s) : service(s) {}
};

AnnotationHttpServer::AnnotationHttpServer(AnnotationService& service,
                                           std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
  auto& server = impl_->server;
  auto& svc = impl_->service;

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    auto body = parse_body(req);
    auto session = svc.create_session(body.value("annotator_id", ""),
                                      body.value("run_id", svc.run().run_id));
    send_json(res, session, 201);
  }));

  server.Get(R"(/sessions/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    send_json(res, svc.session(req.matches[1]));
  }));

  server.Get(R"(/sessions/([^/]+)/next)",
             guarded([&svc](const httplib::Request& req, httplib::Response& res) {
               auto task = svc.next_task(req.matches[1]);
               if (task) {
                 send_json(res, *task);
               } else {
                 send_json(res, {{"done", true}});
               }
             }));

  server.Post(R"(/sessions/([^/]+)/tasks/([^/]+))",
              guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                auto body = parse_body(req);
                std::vector<std::string> labels;
                if (body.contains("labels")) labels = body.at("labels").get<std::vector<std::string>>();
                const bool empty = body.value("empty", false);
                auto record = svc.submit(req.matches[1], req.matches[2], labels, empty);
                send_json(res, record, 201);
              }));

  server.Get("/tally", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    TallyFilter filter;
    if (auto a = query(req, "attribute")) filter.attribute = parse_attribute(*a);
    if (auto p = query(req, "polarity")) filter.polarity = parse_polarity(*p);
    filter.model = query(req, "model");
    send_json(res, svc.get_tally(filter));
  }));

  server.Get(R"(/media/([^/]+)/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    std::optional<PerceptualAttribute> attribute;
    if (auto a = query(req, "attribute")) attribute = parse_attribute(*a);
    auto path = svc.media_path(req.matches[1], req.matches[2], attribute);
    std::ifstream in(path, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    res.set_content(bytes.str(), "image/png");
  }));

  if (static_dir) server.set_mount_point("/", static_dir->string());
}

AnnotationHttpServer::~AnnotationHttpServer() { stop(); }

bool AnnotationHttpServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

int AnnotationHttpServer::bind_to_any_port(const std::string& host) {
  return impl_->server.bind_to_any_port(host);
}

bool AnnotationHttpServer::listen_after_bind() { return impl_->server.listen_after_bind(); }

void AnnotationHttpServer::stop() {
  if (impl_) impl_->server.stop();
}

void AnnotationHttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace streetcam
