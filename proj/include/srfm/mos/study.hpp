#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "srfm/errors.hpp"

namespace srfm::mos {

/// No rater slots left in the study.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// A resubmission that disagrees with the stored score.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// Unknown session or item.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

struct StudyPlan {
  /// Labels of every version shown per image. Raters never see them.
  std::vector<std::string> versions{"NN",    "bicubic", "M_p",     "M_pva",
                                    "M_pca", "M_pcsa",  "M_pcsva", "HR"};
  /// Identifiers of the rated images (file stems).
  std::vector<std::string> images;
  int images_per_rater = 20;
  int raters_per_image = 5;
  int calibration_low = 5;   // exemplars of the low anchor version
  int calibration_high = 5;  // exemplars of the high anchor version
  std::string low_anchor = "NN";
  std::string high_anchor = "HR";
  std::uint64_t seed = 1;

  void validate() const;
  /// Raters needed to give every image `raters_per_image` ratings.
  [[nodiscard]] int rater_capacity() const;
  [[nodiscard]] int items_per_session() const;

  static StudyPlan load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const StudyPlan& p);
void from_json(const nlohmann::json& j, StudyPlan& p);

struct SessionItem {
  std::string id;
  std::string image;
  std::string version;
  /// Opaque handle for the image bytes; reveals neither image nor version.
  std::string token;
  bool calibration = false;
  /// Score a calibration exemplar is anchored to (0 for rating items).
  int anchor = 0;
};

struct RatingRecord {
  std::string session;
  std::string rater;
  std::string item;
  std::string image;
  std::string version;
  int score = 0;
  bool calibration = false;
  double timestamp = 0.0;
};

void to_json(nlohmann::json& j, const RatingRecord& r);
void from_json(const nlohmann::json& j, RatingRecord& r);

struct Session {
  std::string id;
  std::string rater;
  std::vector<SessionItem> items;
  /// item id -> score
  std::map<std::string, int> scores;

  [[nodiscard]] std::size_t answered() const { return scores.size(); }
  [[nodiscard]] bool complete() const { return scores.size() == items.size(); }
  /// First unanswered item in presentation order.
  [[nodiscard]] const SessionItem* next() const;
  [[nodiscard]] const SessionItem* find(const std::string& item_id) const;
};

struct SubmitResult {
  RatingRecord record;
  /// True when the same score had already been stored.
  bool duplicate = false;
  std::size_t answered = 0;
  std::size_t total = 0;
};

struct MosRow {
  std::string version;
  bool present = false;
  std::size_t count = 0;
  double mean = 0.0;
  double stddev = 0.0;
  /// Normal-approximation 95% interval: mean +- 1.96 s / sqrt(n).
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct MosTable {
  std::vector<MosRow> rows;

  [[nodiscard]] const MosRow& row(const std::string& version) const;
  [[nodiscard]] nlohmann::json to_json() const;
  /// Columns: version, n, mos, stddev, ci_low, ci_high (absent versions
  /// have empty statistics).
  [[nodiscard]] std::string to_csv() const;
};

/// Per-version mean score over rating (non-calibration) records.
MosTable aggregate_mos(std::span<const RatingRecord> records,
                       const std::vector<std::string>& versions);

/// Session assignment, score capture and persistence for one study.
///
/// Every state change is appended to a JSON-lines log and flushed to disk
/// before it is acknowledged; constructing a Study over an existing log
/// replays it. All methods are safe to call concurrently.
class Study {
 public:
  Study(StudyPlan plan, std::filesystem::path log_path);
  ~Study();
  Study(const Study&) = delete;
  Study& operator=(const Study&) = delete;

  /// New session (or the rater's existing one). Throws CapacityError
  /// when fewer than images_per_rater images still need raters.
  Session create_session(const std::string& rater);
  [[nodiscard]] std::optional<Session> session(const std::string& id) const;
  /// Validation errors are InputError; unknown ids NotFoundError; a
  /// different score for an answered item ConflictError.
  SubmitResult submit(const std::string& session_id, const std::string& item_id, int score);

  [[nodiscard]] std::vector<RatingRecord> records() const;
  [[nodiscard]] MosTable aggregate() const;
  /// (image, version) behind an opaque token.
  [[nodiscard]] std::optional<std::pair<std::string, std::string>> resolve(
      const std::string& token) const;
  /// Raters assigned to each image so far.
  [[nodiscard]] std::map<std::string, int> assignment_counts() const;
  [[nodiscard]] const StudyPlan& plan() const { return plan_; }

 private:
  Session build_session(const std::string& rater, std::size_t ordinal);
  void append(const nlohmann::json& event);
  void apply_session(const Session& s);
  void replay();

  StudyPlan plan_;
  std::filesystem::path log_path_;
  std::FILE* log_ = nullptr;
  mutable std::mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, std::string> session_by_rater_;
  std::map<std::string, std::pair<std::string, std::string>> tokens_;
  std::map<std::string, int> assigned_;
  std::vector<RatingRecord> records_;
};

}  // namespace srfm::mos
