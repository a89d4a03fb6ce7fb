#include "srfm/mos/server.hpp"

#include <fstream>
#include <sstream>

#include "srfm/image.hpp"
#include "srfm/log.hpp"

// After the Eigen-based headers: httplib pulls in <resolv.h>, whose `_res`
// macro breaks Eigen declarations.
#include <httplib.h>

namespace fs = std::filesystem;

namespace srfm::mos {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  send_json(res, status, {{"error", code}, {"message", message}});
}

nlohmann::json progress(const Session& s) {
  std::size_t calib = 0;
  for (const auto& it : s.items) calib += it.calibration ? 1 : 0;
  return {{"answered", s.answered()},
          {"total", s.items.size()},
          {"calibration_items", calib},
          {"complete", s.complete()}};
}

nlohmann::json public_item(const Session& s, const SessionItem& it) {
  std::size_t index = 0;
  while (index < s.items.size() && s.items[index].id != it.id) ++index;
  nlohmann::json j = {{"id", it.id},
                      {"index", index},
                      {"url", "/images/" + it.token},
                      {"calibration", it.calibration}};
  if (it.calibration) j["anchor"] = it.anchor;
  return j;
}

std::string content_type(const fs::path& p) {
  std::string ext = p.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (ext == ".png") return "image/png";
  if (ext == ".bmp") return "image/bmp";
  if (ext == ".tif" || ext == ".tiff") return "image/tiff";
  return "application/octet-stream";
}

}  // namespace

Server::Server(Study& study, fs::path image_root)
    : study_(study), image_root_(std::move(image_root)),
      http_(std::make_unique<httplib::Server>()) {
  routes();
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = http_->bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!http_->bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void Server::listen() { http_->listen_after_bind(); }

void Server::stop() {
  if (http_) http_->stop();
}

std::optional<fs::path> Server::image_file(const std::string& image,
                                           const std::string& version) const {
  const fs::path dir = image_root_ / version;
  if (!fs::is_directory(dir)) return std::nullopt;
  for (const auto& de : fs::directory_iterator(dir)) {
    if (de.is_regular_file() && de.path().stem() == image && is_image_file(de.path())) {
      return de.path();
    }
  }
  return std::nullopt;
}

void Server::routes() {
  http_->set_exception_handler([](const httplib::Request&, httplib::Response& res,
                                  std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      log::error("request failed", {{"error", e.what()}});
      send_error(res, 500, "internal", e.what());
    }
  });

  http_->Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_error(res, 400, "bad_json", "request body is not JSON");
    }
    if (!body.is_object() || !body.contains("rater") || !body["rater"].is_string() ||
        body["rater"].get<std::string>().empty()) {
      return send_error(res, 400, "validation", "field 'rater' (non-empty string) required");
    }
    try {
      const Session s = study_.create_session(body["rater"].get<std::string>());
      send_json(res, 201, {{"session", s.id}, {"progress", progress(s)}});
    } catch (const CapacityError& e) {
      send_error(res, 409, "no_capacity", e.what());
    }
  });

  http_->Get(R"(/sessions/([0-9a-f]+))", [this](const httplib::Request& req,
                                                 httplib::Response& res) {
    const auto s = study_.session(req.matches[1]);
    if (!s) return send_error(res, 404, "not_found", "unknown session");
    send_json(res, 200, {{"session", s->id}, {"progress", progress(*s)}});
  });

  http_->Get(R"(/sessions/([0-9a-f]+)/next)", [this](const httplib::Request& req,
                                                      httplib::Response& res) {
    const auto s = study_.session(req.matches[1]);
    if (!s) return send_error(res, 404, "not_found", "unknown session");
    const SessionItem* it = s->next();
    nlohmann::json body = {{"session", s->id}, {"progress", progress(*s)}};
    body["item"] = it != nullptr ? public_item(*s, *it) : nlohmann::json();
    send_json(res, 200, body);
  });

  http_->Post(R"(/sessions/([0-9a-f]+)/scores)", [this](const httplib::Request& req,
                                                        httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_error(res, 400, "bad_json", "request body is not JSON");
    }
    if (!body.is_object() || !body.contains("item") || !body["item"].is_string()) {
      return send_error(res, 400, "validation", "field 'item' (string) required");
    }
    if (!body.contains("score") || !body["score"].is_number_integer()) {
      return send_error(res, 400, "validation", "field 'score' must be an integer 1-5");
    }
    const auto score = body["score"].get<long long>();
    if (score < 1 || score > 5) {
      return send_error(res, 400, "validation", "score must be between 1 and 5");
    }
    try {
      const auto r = study_.submit(req.matches[1], body["item"].get<std::string>(),
                                   static_cast<int>(score));
      send_json(res, 200, {{"ack", true},
                           {"item", r.record.item},
                           {"score", r.record.score},
                           {"duplicate", r.duplicate},
                           {"answered", r.answered},
                           {"total", r.total}});
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const InputError& e) {
      send_error(res, 400, "validation", e.what());
    }
  });

  http_->Get("/report", [this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json body = study_.aggregate().to_json();
    const auto counts = study_.assignment_counts();
    int complete = 0;
    for (const auto& [img, n] : counts) complete += n >= study_.plan().raters_per_image ? 1 : 0;
    body["images"] = counts.size();
    body["fully_assigned_images"] = complete;
    send_json(res, 200, body);
  });

  http_->Get(R"(/images/([0-9a-f]+))", [this](const httplib::Request& req,
                                               httplib::Response& res) {
    const auto target = study_.resolve(req.matches[1]);
    if (!target) return send_error(res, 404, "not_found", "unknown image token");
    const auto file = image_file(target->first, target->second);
    if (!file) return send_error(res, 404, "not_found", "image file missing");
    std::ifstream in(*file, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    res.set_header("Cache-Control", "private, max-age=3600");
    res.set_content(buf.str(), content_type(*file));
  });
}

}  // namespace srfm::mos
