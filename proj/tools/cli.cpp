#include "cli.hpp"

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "srfm/data/dataset.hpp"
#include "srfm/data/resize.hpp"
#include "srfm/errors.hpp"
#include "srfm/image.hpp"
#include "srfm/log.hpp"
#include "srfm/metrics.hpp"
#include "srfm/mos/server.hpp"
#include "srfm/mos/study.hpp"
#include "srfm/train/config.hpp"
#include "srfm/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace srfm::cli {

namespace {

constexpr const char* kToolVersion = "1.0.0";

double unix_now() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

json describe_input(const fs::path& p) {
  json j = {{"path", p.string()}, {"exists", fs::exists(p)}};
  if (fs::is_regular_file(p)) {
    j["bytes"] = fs::file_size(p);
    j["modified"] = std::chrono::duration_cast<std::chrono::seconds>(
                        fs::last_write_time(p).time_since_epoch())
                        .count();
  }
  return j;
}

/// The single manifest of an output directory.
class Manifest {
 public:
  Manifest(fs::path dir, std::string command, std::vector<std::string> argv)
      : path_(std::move(dir) / "manifest.json"), start_(unix_now()) {
    j_ = {{"command", std::move(command)},
          {"argv", std::move(argv)},
          {"tool_version", kToolVersion},
          {"started", start_},
          {"inputs", json::array()},
          {"outputs", json::array()},
          {"status", "running"}};
  }
  json& data() { return j_; }
  void input(const fs::path& p) { j_["inputs"].push_back(describe_input(p)); }
  void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
  void write() {
    fs::create_directories(path_.parent_path());
    const fs::path tmp = path_.string() + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw IoError("cannot write manifest " + path_.string());
      out << j_.dump(2) << "\n";
    }
    fs::rename(tmp, path_);
  }
  void finish(const std::string& status) {
    j_["status"] = status;
    j_["wall_clock_s"] = unix_now() - start_;
    write();
  }

 private:
  fs::path path_;
  double start_;
  json j_;
};

std::vector<fs::path> list_images(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(p)) {
    out.push_back(p);
  } else if (fs::is_directory(p)) {
    for (const auto& de : fs::directory_iterator(p)) {
      if (de.is_regular_file() && is_image_file(de.path())) out.push_back(de.path());
    }
    std::sort(out.begin(), out.end());
  } else {
    throw IoError("no such file or directory: " + p.string());
  }
  return out;
}

struct TrainArgs {
  std::string preset;
  std::string config_file;
  std::string out;
  std::string data_index;
  std::vector<std::string> train_dirs;
  std::vector<std::string> settings;
  std::string resume;
  bool tiny = false;
  long updates = -1;
  long seed = -1;
  bool quiet = false;
};

int run_train(const TrainArgs& a, const std::vector<std::string>& argv) {
  train::TrainConfig cfg = a.tiny ? train::TrainConfig::tiny() : train::TrainConfig{};
  if (!a.config_file.empty()) cfg = train::parse_config_file(a.config_file, cfg);
  for (const auto& kv : a.settings) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got " + kv);
    train::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!a.preset.empty()) cfg.preset = loss::parse_preset(a.preset);
  if (a.updates >= 0) cfg.total_updates = a.updates;
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  cfg.validate();

  data::DatasetIndex index;
  if (!a.data_index.empty()) {
    index = data::DatasetIndex::load(a.data_index);
  } else if (!a.train_dirs.empty()) {
    std::vector<fs::path> roots(a.train_dirs.begin(), a.train_dirs.end());
    index = data::ingest_dataset(roots, "train");
  } else {
    throw ConfigError("train needs --data or --train-dir");
  }

  const fs::path out(a.out);
  Manifest manifest(out, "train", argv);
  manifest.data()["config"] = cfg;
  manifest.data()["seed"] = cfg.seed;
  if (!a.data_index.empty()) manifest.input(a.data_index);
  for (const auto& e : index.entries) manifest.input(e.path);
  if (!cfg.extractor_path.empty()) manifest.input(cfg.extractor_path);
  if (!a.resume.empty()) manifest.input(a.resume);
  manifest.write();

  data::SamplerOptions so;
  so.hr_patch = cfg.hr_patch;
  so.scale = cfg.scale;
  so.augment = cfg.augment;
  so.zero_center = cfg.zero_center;
  auto sampler = std::make_shared<const data::PatchSampler>(index, so);
  train::Trainer trainer(cfg, sampler, train::make_extractor(cfg));
  if (!a.resume.empty()) trainer.load_checkpoint(a.resume);
  const fs::path loss_log = out / "loss_log.jsonl";
  trainer.set_loss_log(loss_log);
  manifest.output(loss_log);

  log::info("training", {{"preset", loss::to_string(cfg.preset)},
                         {"updates", cfg.total_updates},
                         {"start", trainer.update()},
                         {"epoch_len", trainer.epoch_len()}});
  while (trainer.update() < cfg.total_updates) {
    const auto r = trainer.step();
    if (!a.quiet && (r.update % 50 == 0 || r.update == 1)) {
      log::info("step", r.to_json());
    }
    if (cfg.checkpoint_interval > 0 && r.update % cfg.checkpoint_interval == 0 &&
        r.update < cfg.total_updates) {
      const fs::path ck = out / ("checkpoint_" + std::to_string(r.update) + ".srfm");
      trainer.save_checkpoint(ck);
      manifest.output(ck);
    }
  }
  const fs::path final_ck = out / "final.srfm";
  trainer.save_checkpoint(final_ck);
  manifest.output(final_ck);
  manifest.data()["final_update"] = trainer.update();
  manifest.finish("ok");
  return 0;
}

int run_prepare(const std::vector<std::string>& roots, const std::string& split,
                const std::string& train_index, const std::string& out,
                const std::vector<std::string>& argv) {
  const fs::path out_path(out);
  const fs::path dir = out_path.parent_path().empty() ? fs::path(".") : out_path.parent_path();
  Manifest manifest(dir, "prepare-data", argv);
  for (const auto& r : roots) manifest.input(r);
  std::optional<data::ChannelMean> mean;
  if (!train_index.empty()) {
    manifest.input(train_index);
    mean = data::DatasetIndex::load(train_index).channel_mean;
  } else if (split != "train") {
    throw ConfigError("split '" + split + "' needs --train-index for the channel mean");
  }
  manifest.write();
  const auto idx = data::ingest_dataset(std::vector<fs::path>(roots.begin(), roots.end()), split,
                                        mean ? &*mean : nullptr);
  idx.save(out_path);
  manifest.output(out_path);
  manifest.data()["images"] = idx.entries.size();
  manifest.data()["channel_mean"] = idx.channel_mean;
  manifest.finish("ok");
  return 0;
}

int run_super_resolve(const std::string& ckpt, const std::string& in, const std::string& out,
                      const std::vector<std::string>& argv) {
  const auto model = train::InferenceModel::load(ckpt);
  const auto inputs = list_images(in);
  const bool to_dir = fs::is_directory(in) || inputs.size() > 1;
  const fs::path out_dir = to_dir ? fs::path(out) : fs::path(out).parent_path();
  Manifest manifest(out_dir.empty() ? fs::path(".") : out_dir, "super-resolve", argv);
  manifest.input(ckpt);
  for (const auto& p : inputs) manifest.input(p);
  manifest.write();
  for (const auto& p : inputs) {
    const Image lr = read_image(p, ImageRole::LowRes);
    const Image sr = model.upscale(lr);
    const fs::path dst = to_dir ? fs::path(out) / (p.stem().string() + ".png") : fs::path(out);
    write_image(dst, sr);
    manifest.output(dst);
    log::info("super-resolved", {{"in", p.string()}, {"out", dst.string()}});
  }
  manifest.finish("ok");
  return 0;
}

struct EvalArgs {
  std::string sr_dir;
  std::string hr_dir;
  std::string ckpt;
  bool bicubic = false;
  std::string out = "report.json";
  std::string csv;
  std::string dataset;
  std::string channel = "luma";
  int border = 4;
  int scale = 4;
  int threads = 0;
};

int run_evaluate(const EvalArgs& a, const std::vector<std::string>& argv) {
  metrics::EvalConvention conv;
  conv.channel = metrics::parse_eval_channel(a.channel);
  conv.border = a.border;
  const fs::path out(a.out);
  const fs::path out_dir = out.parent_path().empty() ? fs::path(".") : out.parent_path();
  Manifest manifest(out_dir, "evaluate", argv);
  manifest.data()["convention"] = conv.to_json();
  manifest.input(a.hr_dir);
  if (!a.sr_dir.empty()) manifest.input(a.sr_dir);
  if (!a.ckpt.empty()) manifest.input(a.ckpt);
  manifest.write();

  const std::string name = a.dataset.empty() ? fs::path(a.hr_dir).filename().string() : a.dataset;
  metrics::MetricReport report;
  if (a.bicubic) {
    report = metrics::evaluate_bicubic(name, a.hr_dir, a.scale, conv, a.threads);
  } else if (!a.ckpt.empty()) {
    const auto model = train::InferenceModel::load(a.ckpt);
    const fs::path sr_dir = out_dir / (name + "_sr");
    for (const auto& p : list_images(a.hr_dir)) {
      const Image hr = crop_to_multiple(read_image(p, ImageRole::HighRes), a.scale);
      Image lr = data::downscale_bicubic(hr, a.scale);
      quantize_8bit(lr);
      write_image(sr_dir / (p.stem().string() + ".png"), model.upscale(lr));
    }
    manifest.output(sr_dir);
    report = metrics::evaluate_dirs(name, sr_dir, a.hr_dir, conv, a.threads);
  } else if (!a.sr_dir.empty()) {
    report = metrics::evaluate_dirs(name, a.sr_dir, a.hr_dir, conv, a.threads);
  } else {
    throw ConfigError("evaluate needs --sr-dir, --ckpt or --bicubic");
  }
  report.write_json(out);
  manifest.output(out);
  const fs::path csv = a.csv.empty() ? fs::path(out).replace_extension(".csv") : fs::path(a.csv);
  report.write_csv(csv);
  manifest.output(csv);
  log::info("evaluation", {{"dataset", name},
                           {"images", report.images.size()},
                           {"missing", report.missing.size()},
                           {"psnr_db", report.mean_psnr},
                           {"ssim", report.mean_ssim},
                           {"vif", report.mean_vif}});
  manifest.data()["summary"] = report.to_json()["mean"];
  manifest.finish("ok");
  return 0;
}

mos::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

int run_mos_serve(const std::string& images, const std::string& plan_path,
                  const std::string& log_path, const std::string& host, int port) {
  mos::Study study(mos::StudyPlan::load(plan_path), log_path);
  mos::Server server(study, images);
  const int bound = server.bind(host, port);
  log::info("MOS service listening", {{"host", host},
                                      {"port", bound},
                                      {"raters", study.plan().rater_capacity()},
                                      {"items_per_session", study.plan().items_per_session()}});
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_server = nullptr;
  return 0;
}

int run_mos_report(const std::string& plan_path, const std::string& log_path,
                   const std::string& out) {
  if (!fs::exists(log_path)) throw IoError("no study log at " + log_path);
  mos::Study study(mos::StudyPlan::load(plan_path), log_path);
  const auto table = study.aggregate();
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + out);
  f << table.to_csv();
  std::cout << table.to_json().dump(2) << "\n";
  return 0;
}

int run_mos_plan(const std::string& images, const std::string& out, std::uint64_t seed,
                 int per_rater, int raters) {
  mos::StudyPlan plan;
  plan.seed = seed;
  plan.images_per_rater = per_rater;
  plan.raters_per_image = raters;
  // Images are the stems present under the HR version directory.
  const fs::path hr_dir = fs::path(images) / plan.high_anchor;
  for (const auto& p : list_images(hr_dir)) plan.images.push_back(p.stem().string());
  plan.validate();
  const fs::path o(out);
  if (o.has_parent_path()) fs::create_directories(o.parent_path());
  std::ofstream f(o);
  if (!f) throw IoError("cannot write " + out);
  f << json(plan).dump(2) << "\n";
  log::info("study plan written", {{"images", plan.images.size()},
                                   {"raters", plan.rater_capacity()}});
  return 0;
}

int run_init_extractor(const std::vector<int>& layers, std::uint64_t seed, const std::string& out) {
  nn::ExtractorConfig ec = nn::ExtractorConfig::vgg19();
  if (!layers.empty()) ec.layers = layers;
  const auto ex = nn::FeatureExtractor::random(ec, seed);
  ex.save(out);
  log::warn("wrote a randomly initialized extractor (not pretrained)", {{"path", out}});
  return 0;
}

std::vector<std::string> replay_args(const std::string& manifest_path, const std::string& out) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot read manifest " + manifest_path);
  const json m = json::parse(in);
  auto argv = m.at("argv").get<std::vector<std::string>>();
  if (!out.empty()) {
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
      if (argv[i] == "--out") {
        argv[i + 1] = out;
        replaced = true;
      }
    }
    if (!replaced) throw ConfigError("manifest command has no --out to redirect");
  }
  return argv;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Single-image super-resolution toolkit", "srfm"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));

  std::vector<std::string> prep_roots;
  std::string prep_split = "train";
  std::string prep_train_index;
  std::string prep_out;
  auto* prep = app.add_subcommand("prepare-data", "Index the images of one dataset split");
  prep->add_option("--root", prep_roots, "image directories (recursive)")->required();
  prep->add_option("--split", prep_split, "split name (train computes the channel mean)");
  prep->add_option("--train-index", prep_train_index, "train index supplying the channel mean")
      ->check(CLI::ExistingFile);
  prep->add_option("--out", prep_out, "index JSON path")->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a generator");
  tr->add_option("--preset", ta.preset, "M_p, M_pva, M_pca, M_pcsa or M_pcsva");
  tr->add_option("--config", ta.config_file, "flat key = value configuration file")
      ->check(CLI::ExistingFile);
  tr->add_option("--out", ta.out, "run directory")->required();
  tr->add_option("--data", ta.data_index, "dataset index from prepare-data");
  tr->add_option("--train-dir", ta.train_dirs, "training image directories");
  tr->add_option("--set", ta.settings, "override a configuration key (key=value)");
  tr->add_option("--resume", ta.resume, "checkpoint to continue from");
  tr->add_option("--updates", ta.updates, "total updates");
  tr->add_option("--seed", ta.seed, "random seed");
  tr->add_flag("--tiny", ta.tiny, "reduced model for CPU smoke runs");
  tr->add_flag("--quiet", ta.quiet, "suppress per-step logs");

  std::string sr_ckpt;
  std::string sr_in;
  std::string sr_out;
  auto* sr = app.add_subcommand("super-resolve", "Upscale images with a trained checkpoint");
  sr->add_option("--ckpt", sr_ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  sr->add_option("--in", sr_in, "image file or directory")->required();
  sr->add_option("--out", sr_out, "output file or directory")->required();

  EvalArgs ea;
  auto* ev = app.add_subcommand("evaluate", "PSNR/SSIM/VIF against reference images");
  ev->add_option("--hr-dir", ea.hr_dir, "reference images")->required();
  ev->add_option("--sr-dir", ea.sr_dir, "super-resolved images (matched by file stem)");
  ev->add_option("--ckpt", ea.ckpt, "super-resolve bicubic-downscaled references first");
  ev->add_flag("--bicubic", ea.bicubic, "evaluate the bicubic baseline");
  ev->add_option("--out", ea.out, "JSON report path");
  ev->add_option("--csv", ea.csv, "CSV report path (default: next to the JSON)");
  ev->add_option("--dataset", ea.dataset, "dataset name for the report");
  ev->add_option("--channel", ea.channel, "luma or rgb")->check(CLI::IsMember({"luma", "rgb"}));
  ev->add_option("--border", ea.border, "pixels cropped from every side");
  ev->add_option("--scale", ea.scale, "upscale factor");
  ev->add_option("--threads", ea.threads, "worker threads (0 = all cores)");

  std::string ms_images;
  std::string ms_plan;
  std::string ms_log = "study_log.jsonl";
  std::string ms_host = "127.0.0.1";
  int ms_port = 8080;
  auto* ms = app.add_subcommand("mos-serve", "Run the MOS study service");
  ms->add_option("--images", ms_images, "root with one directory per version")->required();
  ms->add_option("--plan", ms_plan, "study plan JSON")->required()->check(CLI::ExistingFile);
  ms->add_option("--log", ms_log, "append-only record log");
  ms->add_option("--host", ms_host, "bind address");
  ms->add_option("--port", ms_port, "port (0 = any free port)");

  std::string mr_plan;
  std::string mr_log = "study_log.jsonl";
  std::string mr_out = "mos.csv";
  auto* mr = app.add_subcommand("mos-report", "Aggregate MOS per version");
  mr->add_option("--plan", mr_plan, "study plan JSON")->required()->check(CLI::ExistingFile);
  mr->add_option("--log", mr_log, "record log");
  mr->add_option("--out", mr_out, "CSV output");

  std::string mp_images;
  std::string mp_out = "plan.json";
  std::uint64_t mp_seed = 1;
  int mp_per_rater = 20;
  int mp_raters = 5;
  auto* mp = app.add_subcommand("mos-plan", "Write a study plan for an image tree");
  mp->add_option("--images", mp_images, "root with one directory per version")->required();
  mp->add_option("--out", mp_out, "plan path");
  mp->add_option("--seed", mp_seed, "presentation seed");
  mp->add_option("--images-per-rater", mp_per_rater, "images per rater");
  mp->add_option("--raters-per-image", mp_raters, "raters per image");

  std::vector<int> ie_layers;
  std::uint64_t ie_seed = 7;
  std::string ie_out;
  auto* ie = app.add_subcommand("init-extractor",
                                "Write a randomly initialized perceptual extractor");
  ie->add_option("--layers", ie_layers, "layer plan (0 = pool; default 19-layer VGG)")
      ->delimiter(',');
  ie->add_option("--seed", ie_seed, "weight seed");
  ie->add_option("--out", ie_out, "archive path")->required();

  std::string rr_manifest;
  std::string rr_out;
  auto* rr = app.add_subcommand("rerun", "Replay the command recorded in a manifest");
  rr->add_option("--manifest", rr_manifest, "manifest.json")->required()->check(CLI::ExistingFile);
  rr->add_option("--out", rr_out, "redirect the output directory");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  if (!argv.empty()) argv.pop_back();  // program name
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::map<std::string, log::Level> levels = {{"debug", log::Level::Debug},
                                                    {"info", log::Level::Info},
                                                    {"warn", log::Level::Warn},
                                                    {"error", log::Level::Error}};
  log::set_min_level(levels.at(log_level));
  std::vector<std::string> full(args.begin() + (args.empty() ? 0 : 1), args.end());
  full.insert(full.begin(), "srfm");

  try {
    if (prep->parsed()) {
      return run_prepare(prep_roots, prep_split, prep_train_index, prep_out, full);
    }
    if (tr->parsed()) return run_train(ta, full);
    if (sr->parsed()) return run_super_resolve(sr_ckpt, sr_in, sr_out, full);
    if (ev->parsed()) return run_evaluate(ea, full);
    if (ms->parsed()) return run_mos_serve(ms_images, ms_plan, ms_log, ms_host, ms_port);
    if (mr->parsed()) return run_mos_report(mr_plan, mr_log, mr_out);
    if (mp->parsed()) return run_mos_plan(mp_images, mp_out, mp_seed, mp_per_rater, mp_raters);
    if (ie->parsed()) return run_init_extractor(ie_layers, ie_seed, ie_out);
    if (rr->parsed()) {
      const auto replay = replay_args(rr_manifest, rr_out);
      if (replay.size() > 1 && replay[1] == "rerun") throw ConfigError("refusing to replay a rerun");
      return dispatch(replay);
    }
  } catch (const ConfigError& e) {
    log::error("configuration error", {{"error", e.what()}});
    return 2;
  } catch (const std::exception& e) {
    log::error("command failed", {{"error", e.what()}});
    return 1;
  }
  return 2;
}

}  // namespace srfm::cli
