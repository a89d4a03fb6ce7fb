#include "srfm/mos/study.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;

namespace srfm::mos {

namespace {

std::string hex_token(std::mt19937_64& rng, int words = 2) {
  std::ostringstream os;
  for (int i = 0; i < words; ++i) os << std::hex << std::setw(16) << std::setfill('0') << rng();
  return os.str();
}

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

nlohmann::json item_json(const SessionItem& it) {
  return {{"id", it.id},       {"image", it.image},          {"version", it.version},
          {"token", it.token}, {"calibration", it.calibration}, {"anchor", it.anchor}};
}

SessionItem item_from(const nlohmann::json& j) {
  SessionItem it;
  j.at("id").get_to(it.id);
  j.at("image").get_to(it.image);
  j.at("version").get_to(it.version);
  j.at("token").get_to(it.token);
  j.at("calibration").get_to(it.calibration);
  j.at("anchor").get_to(it.anchor);
  return it;
}

/// Random order in which no two consecutive items share an image.
std::vector<SessionItem> spread_order(std::vector<SessionItem> items, std::mt19937_64& rng) {
  std::map<std::string, std::vector<SessionItem>> by_image;
  std::shuffle(items.begin(), items.end(), rng);
  for (auto& it : items) by_image[it.image].push_back(std::move(it));
  std::vector<SessionItem> out;
  out.reserve(items.size());
  std::size_t remaining = items.size();
  std::string prev;
  while (remaining > 0) {
    std::vector<std::string> candidates;
    std::string forced;
    for (const auto& [img, list] : by_image) {
      if (list.empty()) continue;
      // An image holding more than half of what is left must go now or
      // it can no longer be separated.
      if (img != prev && 2 * list.size() > remaining) forced = img;
      if (img != prev) {
        for (std::size_t k = 0; k < list.size(); ++k) candidates.push_back(img);
      }
    }
    std::string pick;
    if (!forced.empty()) {
      pick = forced;
    } else if (!candidates.empty()) {
      pick = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
    } else {
      pick = prev;  // only one image left: adjacency unavoidable
    }
    out.push_back(std::move(by_image[pick].back()));
    by_image[pick].pop_back();
    prev = pick;
    --remaining;
  }
  return out;
}

}  // namespace

void StudyPlan::validate() const {
  if (versions.empty()) throw ConfigError("study needs at least one version");
  std::set<std::string> uniq(versions.begin(), versions.end());
  if (uniq.size() != versions.size()) throw ConfigError("duplicate version labels");
  std::set<std::string> imgs(images.begin(), images.end());
  if (imgs.size() != images.size()) throw ConfigError("duplicate image identifiers");
  if (images_per_rater <= 0 || raters_per_image <= 0) {
    throw ConfigError("images_per_rater and raters_per_image must be positive");
  }
  if (static_cast<int>(images.size()) < images_per_rater) {
    throw ConfigError("study has fewer images than images_per_rater");
  }
  if ((static_cast<long>(images.size()) * raters_per_image) % images_per_rater != 0) {
    throw ConfigError("images x raters_per_image must be divisible by images_per_rater");
  }
  if (calibration_low < 0 || calibration_high < 0) {
    throw ConfigError("calibration counts must be non-negative");
  }
  if (calibration_low > 0 && !uniq.contains(low_anchor)) {
    throw ConfigError("low anchor version not in the version list");
  }
  if (calibration_high > 0 && !uniq.contains(high_anchor)) {
    throw ConfigError("high anchor version not in the version list");
  }
}

int StudyPlan::rater_capacity() const {
  return static_cast<int>(images.size()) * raters_per_image / images_per_rater;
}

int StudyPlan::items_per_session() const {
  return calibration_low + calibration_high +
         images_per_rater * static_cast<int>(versions.size());
}

StudyPlan StudyPlan::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read study plan: " + path.string());
  try {
    auto p = nlohmann::json::parse(in).get<StudyPlan>();
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed study plan " + path.string() + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const StudyPlan& p) {
  j = {{"versions", p.versions},
       {"images", p.images},
       {"images_per_rater", p.images_per_rater},
       {"raters_per_image", p.raters_per_image},
       {"calibration_low", p.calibration_low},
       {"calibration_high", p.calibration_high},
       {"low_anchor", p.low_anchor},
       {"high_anchor", p.high_anchor},
       {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, StudyPlan& p) {
  StudyPlan d;
  p.versions = j.value("versions", d.versions);
  j.at("images").get_to(p.images);
  p.images_per_rater = j.value("images_per_rater", d.images_per_rater);
  p.raters_per_image = j.value("raters_per_image", d.raters_per_image);
  p.calibration_low = j.value("calibration_low", d.calibration_low);
  p.calibration_high = j.value("calibration_high", d.calibration_high);
  p.low_anchor = j.value("low_anchor", d.low_anchor);
  p.high_anchor = j.value("high_anchor", d.high_anchor);
  p.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const RatingRecord& r) {
  j = {{"session", r.session}, {"rater", r.rater},   {"item", r.item},
       {"image", r.image},     {"version", r.version}, {"score", r.score},
       {"calibration", r.calibration}, {"timestamp", r.timestamp}};
}

void from_json(const nlohmann::json& j, RatingRecord& r) {
  j.at("session").get_to(r.session);
  j.at("rater").get_to(r.rater);
  j.at("item").get_to(r.item);
  j.at("image").get_to(r.image);
  j.at("version").get_to(r.version);
  j.at("score").get_to(r.score);
  j.at("calibration").get_to(r.calibration);
  j.at("timestamp").get_to(r.timestamp);
}

const SessionItem* Session::next() const {
  for (const auto& it : items) {
    if (!scores.contains(it.id)) return &it;
  }
  return nullptr;
}

const SessionItem* Session::find(const std::string& item_id) const {
  for (const auto& it : items) {
    if (it.id == item_id) return &it;
  }
  return nullptr;
}

const MosRow& MosTable::row(const std::string& version) const {
  for (const auto& r : rows) {
    if (r.version == version) return r;
  }
  throw NotFoundError("no MOS row for version " + version);
}

nlohmann::json MosTable::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = {{"version", r.version}, {"present", r.present}, {"n", r.count}};
    if (r.present) {
      j["mos"] = r.mean;
      j["stddev"] = r.stddev;
      j["ci95"] = {r.ci_low, r.ci_high};
    } else {
      j["mos"] = nullptr;
    }
    arr.push_back(j);
  }
  return {{"versions", arr}};
}

std::string MosTable::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "version,n,mos,stddev,ci_low,ci_high\n";
  for (const auto& r : rows) {
    os << r.version << "," << r.count << ",";
    if (r.present) {
      os << r.mean << "," << r.stddev << "," << r.ci_low << "," << r.ci_high;
    } else {
      os << ",,,";
    }
    os << "\n";
  }
  return os.str();
}

MosTable aggregate_mos(std::span<const RatingRecord> records,
                       const std::vector<std::string>& versions) {
  std::map<std::string, std::vector<int>> scores;
  for (const auto& r : records) {
    if (!r.calibration) scores[r.version].push_back(r.score);
  }
  MosTable t;
  for (const auto& v : versions) {
    MosRow row;
    row.version = v;
    auto it = scores.find(v);
    if (it != scores.end() && !it->second.empty()) {
      const auto& s = it->second;
      row.present = true;
      row.count = s.size();
      // Integer sums keep the mean independent of record order.
      long sum = 0;
      for (int x : s) sum += x;
      row.mean = static_cast<double>(sum) / static_cast<double>(s.size());
      if (s.size() > 1) {
        double ss = 0.0;
        for (int x : s) ss += (x - row.mean) * (x - row.mean);
        row.stddev = std::sqrt(ss / static_cast<double>(s.size() - 1));
      }
      const double half = 1.96 * row.stddev / std::sqrt(static_cast<double>(s.size()));
      row.ci_low = row.mean - half;
      row.ci_high = row.mean + half;
    }
    t.rows.push_back(row);
  }
  return t;
}

Study::Study(StudyPlan plan, fs::path log_path)
    : plan_(std::move(plan)), log_path_(std::move(log_path)) {
  plan_.validate();
  for (const auto& img : plan_.images) assigned_[img] = 0;
  if (log_path_.has_parent_path()) fs::create_directories(log_path_.parent_path());
  replay();
  log_ = std::fopen(log_path_.c_str(), "ab");
  if (log_ == nullptr) throw IoError("cannot open study log: " + log_path_.string());
}

Study::~Study() {
  if (log_ != nullptr) std::fclose(log_);
}

void Study::append(const nlohmann::json& event) {
  const std::string line = event.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() ||
      std::fflush(log_) != 0 || ::fsync(::fileno(log_)) != 0) {
    throw IoError("failed to persist study event to " + log_path_.string());
  }
}

void Study::apply_session(const Session& s) {
  sessions_[s.id] = s;
  session_by_rater_[s.rater] = s.id;
  std::set<std::string> rated;
  for (const auto& it : s.items) {
    tokens_[it.token] = {it.image, it.version};
    if (!it.calibration) rated.insert(it.image);
  }
  for (const auto& img : rated) ++assigned_[img];
}

void Study::replay() {
  if (!fs::exists(log_path_)) return;
  std::ifstream in(log_path_);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json ev;
    try {
      ev = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      // A torn final line from a crash mid-write was never acknowledged.
      if (in.peek() == EOF) break;
      throw IoError("corrupt study log at line " + std::to_string(lineno));
    }
    const std::string type = ev.value("type", "");
    if (type == "session") {
      Session s;
      ev.at("id").get_to(s.id);
      ev.at("rater").get_to(s.rater);
      for (const auto& it : ev.at("items")) s.items.push_back(item_from(it));
      apply_session(s);
    } else if (type == "score") {
      const auto rec = ev.at("record").get<RatingRecord>();
      auto it = sessions_.find(rec.session);
      if (it == sessions_.end()) throw IoError("study log scores an unknown session");
      it->second.scores[rec.item] = rec.score;
      records_.push_back(rec);
    } else {
      throw IoError("unknown study log event at line " + std::to_string(lineno));
    }
  }
}

Session Study::build_session(const std::string& rater, std::size_t ordinal) {
  std::seed_seq seq{static_cast<std::uint32_t>(plan_.seed),
                    static_cast<std::uint32_t>(plan_.seed >> 32),
                    static_cast<std::uint32_t>(ordinal)};
  std::mt19937_64 rng(seq);

  // Least-assigned images first, random among ties.
  std::vector<std::string> pool;
  for (const auto& img : plan_.images) {
    if (assigned_[img] < plan_.raters_per_image) pool.push_back(img);
  }
  if (static_cast<int>(pool.size()) < plan_.images_per_rater) {
    throw CapacityError("study fully assigned: no capacity for another rater");
  }
  std::shuffle(pool.begin(), pool.end(), rng);
  std::stable_sort(pool.begin(), pool.end(), [&](const std::string& a, const std::string& b) {
    return assigned_[a] < assigned_[b];
  });
  pool.resize(plan_.images_per_rater);

  Session s;
  s.rater = rater;
  s.id = hex_token(rng, 1);
  int counter = 0;
  auto make_item = [&](const std::string& img, const std::string& ver, bool calib, int anchor) {
    SessionItem it;
    it.id = "i" + std::to_string(counter++);
    it.image = img;
    it.version = ver;
    it.token = hex_token(rng);
    it.calibration = calib;
    it.anchor = anchor;
    return it;
  };

  std::vector<std::string> exemplars = plan_.images;
  std::shuffle(exemplars.begin(), exemplars.end(), rng);
  for (int k = 0; k < plan_.calibration_low; ++k) {
    s.items.push_back(make_item(exemplars[k % exemplars.size()], plan_.low_anchor, true, 1));
  }
  for (int k = 0; k < plan_.calibration_high; ++k) {
    s.items.push_back(make_item(exemplars[(plan_.calibration_low + k) % exemplars.size()],
                                plan_.high_anchor, true, 5));
  }
  std::vector<SessionItem> rating;
  for (const auto& img : pool) {
    for (const auto& ver : plan_.versions) rating.push_back(make_item(img, ver, false, 0));
  }
  for (auto& it : spread_order(std::move(rating), rng)) s.items.push_back(std::move(it));
  return s;
}

Session Study::create_session(const std::string& rater) {
  if (rater.empty()) throw InputError("rater id must not be empty");
  std::lock_guard lock(mutex_);
  if (auto it = session_by_rater_.find(rater); it != session_by_rater_.end()) {
    return sessions_.at(it->second);
  }
  Session s = build_session(rater, sessions_.size());
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : s.items) items.push_back(item_json(it));
  append({{"type", "session"}, {"id", s.id}, {"rater", s.rater}, {"items", items}});
  apply_session(s);
  return s;
}

std::optional<Session> Study::session(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

SubmitResult Study::submit(const std::string& session_id, const std::string& item_id,
                           int score) {
  if (score < 1 || score > 5) {
    throw InputError("score must be an integer from 1 to 5, got " + std::to_string(score));
  }
  std::lock_guard lock(mutex_);
  auto sit = sessions_.find(session_id);
  if (sit == sessions_.end()) throw NotFoundError("unknown session " + session_id);
  Session& s = sit->second;
  const SessionItem* item = s.find(item_id);
  if (item == nullptr) throw NotFoundError("item " + item_id + " not in session");

  SubmitResult res;
  res.total = s.items.size();
  if (auto prev = s.scores.find(item_id); prev != s.scores.end()) {
    if (prev->second != score) {
      throw ConflictError("item " + item_id + " already scored " +
                          std::to_string(prev->second));
    }
    for (const auto& r : records_) {
      if (r.session == session_id && r.item == item_id) res.record = r;
    }
    res.duplicate = true;
    res.answered = s.answered();
    return res;
  }

  RatingRecord rec;
  rec.session = session_id;
  rec.rater = s.rater;
  rec.item = item_id;
  rec.image = item->image;
  rec.version = item->version;
  rec.score = score;
  rec.calibration = item->calibration;
  rec.timestamp = now_seconds();
  append({{"type", "score"}, {"record", rec}});
  s.scores[item_id] = score;
  records_.push_back(rec);
  res.record = rec;
  res.answered = s.answered();
  return res;
}

std::vector<RatingRecord> Study::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

MosTable Study::aggregate() const {
  const auto snapshot = records();
  return aggregate_mos(snapshot, plan_.versions);
}

std::optional<std::pair<std::string, std::string>> Study::resolve(
    const std::string& token) const {
  std::lock_guard lock(mutex_);
  auto it = tokens_.find(token);
  if (it == tokens_.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, int> Study::assignment_counts() const {
  std::lock_guard lock(mutex_);
  return assigned_;
}

}  // namespace srfm::mos
