#pragma once

#include <string_view>

#include <nlohmann/json.hpp>

namespace srfm::log {

enum class Level { Debug, Info, Warn, Error };

/// Emit one JSON object per line on standard error:
/// `{"ts": <unix seconds>, "level": "...", "msg": "...", ...fields}`.
void emit(Level level, std::string_view msg,
          const nlohmann::json& fields = nlohmann::json::object());

inline void info(std::string_view msg,
                 const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::Info, msg, fields);
}
inline void warn(std::string_view msg,
                 const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::Warn, msg, fields);
}
inline void error(std::string_view msg,
                  const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::Error, msg, fields);
}

/// Messages below this level are dropped (default Info).
void set_min_level(Level level);

}  // namespace srfm::log
