#include "srfm/log.hpp"

#include <atomic>
#include <chrono>
#include <iostream>
#include <mutex>

namespace srfm::log {
namespace {

std::atomic<Level> g_min_level{Level::Info};
std::mutex g_mutex;

const char* name(Level level) {
  switch (level) {
    case Level::Debug:
      return "debug";
    case Level::Info:
      return "info";
    case Level::Warn:
      return "warn";
    case Level::Error:
      return "error";
  }
  return "info";
}

}  // namespace

void set_min_level(Level level) { g_min_level = level; }

void emit(Level level, std::string_view msg, const nlohmann::json& fields) {
  if (level < g_min_level.load()) return;
  using clock = std::chrono::system_clock;
  const double ts =
      std::chrono::duration<double>(clock::now().time_since_epoch()).count();
  nlohmann::json line = {{"ts", ts}, {"level", name(level)}, {"msg", msg}};
  if (fields.is_object()) line.update(fields);
  const std::string text = line.dump();
  std::lock_guard lock(g_mutex);
  std::cerr << text << '\n';
}

}  // namespace srfm::log
