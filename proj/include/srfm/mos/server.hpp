#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "srfm/mos/study.hpp"

namespace httplib {
class Server;
}

namespace srfm::mos {

/// HTTP JSON front end of a Study.
///
///   POST /sessions                {"rater": id}          -> 201 session summary
///   GET  /sessions/{id}                                  -> progress
///   GET  /sessions/{id}/next                             -> next item or complete
///   POST /sessions/{id}/scores    {"item": id, "score": 1..5}
///   GET  /report                                         -> MOS table
///   GET  /images/{token}                                 -> image bytes
///
/// Items expose only an opaque image URL, never image names or version
/// labels. Errors are `{"error": code, "message": text}` with status 400
/// (validation), 404 (unknown id), 409 (conflicting score or no capacity).
class Server {
 public:
  /// Image files are looked up as `<image_root>/<version>/<image>.<ext>`.
  Server(Study& study, std::filesystem::path image_root);
  ~Server();

  /// Bind to `host:port` (port 0 picks a free port); returns the port.
  int bind(const std::string& host, int port);
  /// Serve until stop() is called.
  void listen();
  void stop();

  /// Path of the file behind (image, version), if present.
  [[nodiscard]] std::optional<std::filesystem::path> image_file(const std::string& image,
                                                                const std::string& version) const;

 private:
  void routes();

  Study& study_;
  std::filesystem::path image_root_;
  std::unique_ptr<httplib::Server> http_;
};

}  // namespace srfm::mos
