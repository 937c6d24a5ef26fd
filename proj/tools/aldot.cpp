// aldot: dataset labeling, review, evaluation and tracking simulation.

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <pthread.h>

#include "aldot/assurance.hpp"
#include "aldot/dataset.hpp"
#include "aldot/detection.hpp"
#include "aldot/external_detector.hpp"
#include "aldot/metrics.hpp"
#include "aldot/review_service.hpp"
#include "aldot/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace aldot;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDetector = 3;
constexpr int kExitIo = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation:
    case ErrorKind::conflict: return kExitValidation;
    case ErrorKind::detector: return kExitDetector;
    case ErrorKind::io:
    case ErrorKind::not_found: return kExitIo;
  }
  return kExitIo;
}

int fail(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump()
            << "\n";
  return code;
}

void print(const json& doc) { std::cout << doc.dump(2) << "\n"; }

void check_fraction(const char* name, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ValidationError(path.string() + ": not valid JSON");
  return doc;
}

/// Writes `content` unless the file already holds something else and
/// overwriting was not requested. Returns false when the file was unchanged.
bool write_guarded(const fs::path& path, const std::string& content, bool force) {
  if (fs::exists(path)) {
    if (read_file(path) == content) return false;
    if (!force) throw ConflictError(path.string() + " exists with different content; pass --force");
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, content);
  return true;
}

fs::path require_dataset(const std::string& root) {
  if (root.empty()) throw ValidationError("no dataset given (positional argument or ALDOT_DATASET)");
  if (!fs::exists(fs::path(root) / "manifest.json")) throw NotFoundError("no dataset at " + root);
  return root;
}

std::vector<std::string> split_command(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> argv;
  for (std::string word; in >> word;) argv.push_back(word);
  if (argv.empty()) throw ValidationError("detector command is empty");
  return argv;
}

// ---- ingest ----------------------------------------------------------------------

struct IngestArgs {
  std::string frames;
  std::string out;
  std::string pattern = "*.png";
  std::vector<std::string> shifts;
  std::string shift_file;
  std::vector<std::string> classes{"roomba"};
  bool force = false;
};

int run_ingest(const IngestArgs& a) {
  DatasetManifest m = ingest_frames(a.frames, a.pattern);
  std::vector<std::string> shifts = a.shifts;
  if (!a.shift_file.empty()) {
    std::istringstream in(read_file(a.shift_file));
    for (std::string id; in >> id;) shifts.push_back(id);
  }
  for (const auto& id : shifts) {
    auto it = std::find_if(m.frames.begin(), m.frames.end(),
                           [&](const FrameRecord& f) { return f.frame_id == id; });
    if (it == m.frames.end()) throw ValidationError("scenario shift names unknown frame '" + id + "'");
    it->scenario_shift = true;
  }
  m.class_names = a.classes;
  m.generated_by = {{"tool", "aldot"}, {"command", "ingest"}, {"pattern", a.pattern},
                    {"scenario_shifts", shifts}};

  const fs::path root = a.out;
  fs::create_directories(root);
  DatasetLock lock(root);
  if (fs::exists(root / "manifest.json")) {
    const DatasetManifest old = load_dataset(root);
    DatasetManifest cmp = m;
    cmp.created_at = old.created_at;
    cmp.source_note = old.source_note;
    if (cmp.frames == old.frames && cmp.class_names == old.class_names) {
      print({{"dataset", root.string()}, {"frames", m.frames.size()}, {"changed", false}});
      return kExitOk;
    }
    if (!a.force) throw ConflictError(root.string() + " already holds a different dataset; pass --force");
  }
  const fs::path frames_dir = root / "frames";
  fs::create_directories(frames_dir);
  if (!fs::equivalent(a.frames, frames_dir)) {
    for (const auto& f : m.frames) {
      const fs::path name = fs::path(f.image_path).filename();
      fs::copy_file(fs::path(a.frames) / name, frames_dir / name, fs::copy_options::overwrite_existing);
    }
  }
  save_dataset(root, m);
  std::int64_t unreadable = 0;
  for (const auto& f : m.frames) unreadable += f.status == FrameStatus::unreadable;
  print({{"dataset", root.string()}, {"frames", m.frames.size()}, {"unreadable", unreadable},
         {"changed", true}});
  return kExitOk;
}

// ---- label -----------------------------------------------------------------------

struct LabelArgs {
  std::string dataset;
  std::string detector = "oracle";
  std::string command;
  std::string url;
  int timeout_ms = 2000;
  double nms_iou = 0.5;
  std::uint64_t seed = 0;
  std::string model_name;
  double jitter = 0.0;
  double size_jitter = 0.0;
  double miss_rate = 0.0;
  double fp_rate = 0.0;
  double conf_mean = 0.97;
  double conf_sigma = 0.0;
  std::uint64_t warmup_frames = 0;
  bool force = false;
};

int run_label(const LabelArgs& a) {
  check_fraction("--nms-iou", a.nms_iou);
  const fs::path root = require_dataset(a.dataset);
  DatasetLock lock(root);
  DatasetManifest m = load_dataset(root);

  std::unique_ptr<Detector> detector;
  json detector_doc;
  if (a.detector == "oracle") {
    OracleNoiseModel model;
    model.center_jitter_sigma = a.jitter;
    model.size_jitter_sigma = a.size_jitter;
    model.miss_rate = a.miss_rate;
    model.false_positive_rate = a.fp_rate;
    model.confidence_mean = a.conf_mean;
    model.confidence_sigma = a.conf_sigma;
    model.warmup.frames = a.warmup_frames;
    model.seed = a.seed;
    detector = std::make_unique<OracleDetector>(model);
    detector_doc = {{"type", "oracle"}, {"center_jitter_sigma", a.jitter},
                    {"size_jitter_sigma", a.size_jitter}, {"miss_rate", a.miss_rate},
                    {"false_positive_rate", a.fp_rate}, {"confidence_mean", a.conf_mean},
                    {"confidence_sigma", a.conf_sigma}, {"warmup_frames", a.warmup_frames}};
  } else if (a.detector == "cmd" || a.detector == "url") {
    ExternalDetectorConfig cfg;
    cfg.timeout = std::chrono::milliseconds(a.timeout_ms);
    if (a.detector == "cmd") {
      cfg.command = split_command(a.command);
      detector_doc = {{"type", "external-cmd"}, {"command", a.command}};
    } else {
      if (a.url.empty()) throw ValidationError("--url is required with --detector url");
      cfg.transport = ExternalDetectorConfig::Transport::http;
      cfg.url = a.url;
      detector_doc = {{"type", "external-url"}, {"url", a.url}};
    }
    detector = std::make_unique<ExternalDetector>(cfg);
  } else {
    throw ValidationError("--detector must be oracle, cmd or url");
  }
  const std::string model_name = a.model_name.empty() ? detector_doc["type"].get<std::string>() : a.model_name;

  DatasetManifest next = m;
  std::int64_t boxes = 0;
  std::int64_t labeled = 0;
  for (std::size_t i = 0; i < next.frames.size(); ++i) {
    FrameRecord& f = next.frames[i];
    if (f.status != FrameStatus::ok) continue;
    std::vector<BoundingBox> truth;
    std::vector<Annotation> kept;
    for (const auto& an : f.annotations) {
      if (an.provenance != Provenance::manual) continue;
      truth.push_back(an.box);
      kept.push_back(an);
    }
    FrameRequest req{f.frame_id, f.width, f.height, fs::absolute(root / f.image_path).string(), i};
    for (const auto& d : nms(detector->detect(req, truth), a.nms_iou)) {
      Annotation an;
      an.box = d.box;
      an.provenance = Provenance::automatic;
      an.source_model = model_name;
      kept.push_back(an);
      ++boxes;
    }
    f.annotations = std::move(kept);
    ++labeled;
  }
  next.generated_by = {{"tool", "aldot"}, {"command", "label"}, {"seed", a.seed},
                       {"nms_iou", a.nms_iou}, {"detector", detector_doc}, {"model", model_name},
                       {"ingest", m.generated_by}};

  const bool has_auto = std::any_of(m.frames.begin(), m.frames.end(), [](const FrameRecord& f) {
    return std::any_of(f.annotations.begin(), f.annotations.end(),
                       [](const Annotation& an) { return an.provenance != Provenance::manual; });
  });
  if (has_auto) {
    if (next.frames == m.frames) {
      print({{"dataset", root.string()}, {"boxes", boxes}, {"changed", false}});
      return kExitOk;
    }
    if (!a.force) throw ConflictError("dataset already has model labels; pass --force to replace them");
  }
  save_dataset(root, next);
  print({{"dataset", root.string()}, {"frames_labeled", labeled}, {"boxes", boxes}, {"seed", a.seed},
         {"changed", true}});
  return kExitOk;
}

// ---- sample ----------------------------------------------------------------------

struct SampleArgs {
  std::string dataset;
  std::optional<std::int64_t> n;
  std::optional<double> sigma;
  double margin = 0.05;
  double confidence = 0.95;
  std::string strategy = "uniform";
  bool strict = false;
  std::uint64_t seed = 0;
  double threshold = kDefaultConfidenceThreshold;
  std::string session_id;
  bool force = false;
};

int run_sample(const SampleArgs& a) {
  check_fraction("--threshold", a.threshold);
  const fs::path root = require_dataset(a.dataset);
  DatasetLock lock(root);
  const DatasetManifest m = load_dataset(root);
  SamplingPlan plan = make_sampling_plan(static_cast<std::int64_t>(m.frames.size()), a.sigma, a.margin,
                                         a.confidence, sampling_strategy_from_string(a.strategy));
  if (a.n) {
    plan.sample_size = *a.n;
    validate(plan);
  }
  plan.strict = a.strict;
  const std::string id = a.session_id.empty() ? "review-" + std::to_string(a.seed) : a.session_id;
  ReviewSession session = create_review_session(m, plan, a.seed, a.threshold, id);

  json out = {{"session_id", id},
              {"sample_size", plan.sample_size},
              {"population_size", plan.population_size},
              {"seed", a.seed},
              {"threshold", a.threshold},
              {"frames", session.sampled_frame_ids}};
  const fs::path path = review_session_path(root, id);
  if (fs::exists(path)) {
    const ReviewSession old = load_review_session(root, id);
    if (old.plan == session.plan && old.seed == session.seed &&
        old.sampled_frame_ids == session.sampled_frame_ids &&
        old.confidence_threshold == session.confidence_threshold) {
      out["changed"] = false;
      print(out);
      return kExitOk;
    }
    if (!a.force) throw ConflictError("session " + id + " exists with a different sample; pass --force");
  }
  save_review_session(root, session);
  out["changed"] = true;
  print(out);
  return kExitOk;
}

// ---- review-serve ---------------------------------------------------------------

struct ServeArgs {
  std::string dataset;
  std::string session_id;
  std::string bind = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::string port_file;
};

int run_serve(const ServeArgs& a) {
  const fs::path root = require_dataset(a.dataset);
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ReviewService service(root, a.session_id);
  if (!a.static_dir.empty()) service.set_static_dir(a.static_dir);
  const int port = service.bind(a.bind, a.port);
  if (!a.port_file.empty()) write_file_atomic(a.port_file, std::to_string(port) + "\n");
  service.start();
  std::cout << json{{"listening", "http://" + a.bind + ":" + std::to_string(port)},
                    {"session_id", a.session_id}}.dump()
            << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  service.stop();
  return kExitOk;
}

// ---- filter ----------------------------------------------------------------------

struct FilterArgs {
  std::string dataset;
  std::string session_id;
  std::optional<double> threshold;
};

int run_filter(const FilterArgs& a) {
  const fs::path root = require_dataset(a.dataset);
  DatasetLock lock(root);
  DatasetManifest m = load_dataset(root);
  json out = {{"dataset", root.string()}};

  if (!a.session_id.empty()) {
    ReviewSession session = load_review_session(root, a.session_id);
    if (a.threshold && *a.threshold != session.confidence_threshold)
      throw ValidationError("--threshold differs from the session threshold " +
                            std::to_string(session.confidence_threshold));
    out["session_id"] = session.session_id;
    if (session.finalized) {
      out["changed"] = false;
      out["note"] = "session already applied";
      print(out);
      return kExitOk;
    }
    const ApplyResult r = apply_verdicts(m, session);
    m = r.manifest;
    out["acceptance_rate"] = r.acceptance_rate ? json(*r.acceptance_rate) : json(nullptr);
    out["accepted_frames"] = r.accepted_frames;
    out["rejected_frames"] = r.rejected_frames;
    out["boxes_accepted"] = r.boxes_accepted;
    out["boxes_rejected"] = r.boxes_rejected;
    session.finalized = true;
    save_dataset(root, m);
    save_review_session(root, session);
  } else {
    const double t = a.threshold.value_or(kDefaultConfidenceThreshold);
    check_fraction("--threshold", t);
    const bool changed = m.label_threshold != t;
    m.label_threshold = t;
    if (changed) save_dataset(root, m);
    out["changed"] = changed;
  }

  std::int64_t kept = 0;
  std::int64_t dropped = 0;
  for (const auto& f : m.frames) {
    const FilterResult fr = filter_by_confidence(f.annotations, m.label_threshold);
    kept += static_cast<std::int64_t>(fr.kept.size());
    dropped += static_cast<std::int64_t>(fr.dropped.size());
  }
  out["threshold"] = m.label_threshold;
  out["boxes_kept"] = kept;
  out["boxes_dropped"] = dropped;
  print(out);
  return kExitOk;
}

// ---- convert ---------------------------------------------------------------------

struct ConvertArgs {
  std::string input;
  std::string from = "darknet";
  std::string to = "coco";
  std::string out;
  bool force = false;
};

int run_convert(const ConvertArgs& a) {
  if (a.from == "darknet" && a.to == "coco") {
    const fs::path root = require_dataset(a.input);
    const DatasetManifest m = load_dataset(root);
    if (a.out.empty()) throw ValidationError("--out is required");
    const bool changed = write_guarded(a.out, export_coco(m).dump(2) + "\n", a.force);
    print({{"coco", a.out}, {"images", m.frames.size()}, {"changed", changed}});
    return kExitOk;
  }
  if (a.from == "darknet" && a.to == "darknet") {
    const fs::path root = require_dataset(a.input);
    DatasetLock lock(root);
    save_dataset(root, load_dataset(root));
    print({{"labels", (root / "labels").string()}});
    return kExitOk;
  }
  if (a.from == "coco" && a.to == "darknet") {
    if (a.out.empty()) throw ValidationError("--out is required");
    DatasetManifest m = import_coco(read_json(a.input));
    if (m.generated_by.empty()) m.generated_by = {{"tool", "aldot"}, {"command", "convert"}, {"from", a.input}};
    const fs::path root = a.out;
    fs::create_directories(root);
    DatasetLock lock(root);
    if (fs::exists(root / "manifest.json")) {
      const DatasetManifest old = load_dataset(root);
      DatasetManifest cmp = m;
      for (std::size_t i = 0; i < cmp.frames.size() && i < old.frames.size(); ++i)
        cmp.frames[i].status = old.frames[i].status;
      if (cmp.frames == old.frames && cmp.class_names == old.class_names) {
        print({{"dataset", root.string()}, {"frames", m.frames.size()}, {"changed", false}});
        return kExitOk;
      }
      if (!a.force) throw ConflictError(root.string() + " already holds a different dataset; pass --force");
    }
    save_dataset(root, m);
    print({{"dataset", root.string()}, {"frames", m.frames.size()}, {"changed", true}});
    return kExitOk;
  }
  throw ValidationError("unsupported conversion " + a.from + " -> " + a.to);
}

// ---- evaluate --------------------------------------------------------------------

struct EvaluateArgs {
  std::string dataset;
  std::string pred;
  std::string truth;
  double iou = 0.5;
  double conf = 0.5;
  std::string out;
  bool force = false;
};

int run_evaluate(const EvaluateArgs& a) {
  check_fraction("--iou", a.iou);
  check_fraction("--conf", a.conf);
  const fs::path root = require_dataset(a.dataset);
  const DatasetManifest m = load_dataset(root);
  if (!fs::is_directory(a.pred)) throw NotFoundError("prediction directory " + a.pred + " not found");

  std::vector<FrameEvaluation> frames;
  for (const auto& f : m.frames) {
    FrameEvaluation fe;
    fe.frame_id = f.frame_id;
    if (!a.truth.empty()) {
      fe.truths = read_label_file(fs::path(a.truth) / (f.frame_id + ".txt"), m.class_count());
    } else {
      for (const auto& an : f.annotations)
        if (an.provenance == Provenance::manual || an.provenance == Provenance::reviewed_accepted)
          fe.truths.push_back(an.box);
    }
    for (auto& box : read_label_file(fs::path(a.pred) / (f.frame_id + ".txt"), m.class_count())) {
      if (!box.confidence)
        throw ValidationError("predictions for " + f.frame_id + " lack the confidence field");
      fe.detections.push_back({box, f.frame_id, 0.0});
    }
    frames.push_back(std::move(fe));
  }
  const EvalReport report = evaluate(frames, a.iou, a.conf, m.class_count());
  std::cout << render_eval_table(report, m.class_names);
  if (!a.out.empty()) {
    const json doc = {{"config",
                       {{"dataset", root.string()}, {"pred", a.pred}, {"truth", a.truth},
                        {"iou", a.iou}, {"conf", a.conf}}},
                      {"report", to_json(report)}};
    write_guarded(a.out, doc.dump(2) + "\n", a.force);
  }
  return kExitOk;
}

// ---- simulate --------------------------------------------------------------------

struct SimulateArgs {
  std::string episode;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  std::optional<double> latency;
  std::string out;
  bool force = false;
};

int run_simulate(const SimulateArgs& a) {
  json doc = a.episode.empty() ? json::object() : read_json(a.episode);
  if (a.seed) doc["seed"] = *a.seed;
  if (a.duration) doc["duration"] = *a.duration;
  if (a.latency) doc["detector"]["noise"]["latency_mean"] = *a.latency;
  const sim::EpisodeConfig cfg = sim::episode_config_from_json(doc);
  const sim::EpisodeLog log = sim::run_episode(cfg);
  const json summary = sim::episode_summary_json(log, cfg);
  if (!a.out.empty()) {
    const fs::path dir = a.out;
    write_guarded(dir / "episode.csv", sim::episode_csv(log), a.force);
    write_guarded(dir / "summary.json", summary.dump(2) + "\n", a.force);
  }
  json brief = summary;
  brief.erase("config");
  brief["fps"].erase("rolling");
  print(brief);
  return kExitOk;
}

// ---- report ----------------------------------------------------------------------

struct ReportArgs {
  std::string ledger = "ledger.json";
  std::vector<std::string> add;
  std::string eval;
};

EvalReport eval_report_from_json(const json& doc) {
  const json& r = doc.contains("report") ? doc["report"] : doc;
  EvalReport rep;
  rep.iou_threshold = r.at("iou_threshold").get<double>();
  rep.confidence_threshold = r.at("confidence_threshold").get<double>();
  for (const auto& [cls, ap] : r.at("average_precision").items())
    rep.average_precision[std::stoi(cls)] = ap.is_null() ? std::nullopt : std::optional<double>(ap.get<double>());
  const auto opt = [&](const char* key) {
    return r.contains(key) && !r[key].is_null() ? std::optional<double>(r[key].get<double>()) : std::nullopt;
  };
  rep.mean_average_precision = opt("mean_average_precision");
  rep.precision = r.at("precision").get<double>();
  rep.recall = r.at("recall").get<double>();
  rep.true_positives = r.at("true_positives").get<std::int64_t>();
  rep.false_positives = r.at("false_positives").get<std::int64_t>();
  rep.false_negatives = r.at("false_negatives").get<std::int64_t>();
  rep.mean_iou_true_positive = opt("mean_iou_true_positive");
  rep.iou_pass_rate = opt("iou_pass_rate");
  return rep;
}

int run_report(const ReportArgs& a) {
  MetricsLedger ledger;
  if (fs::exists(a.ledger)) ledger = MetricsLedger::from_json(read_json(a.ledger));
  std::int64_t added = 0;
  for (const auto& path : a.add) added += ledger.record(read_json(path)).inserted ? 1 : 0;
  if (added > 0) write_file_atomic(a.ledger, ledger.to_json().dump(2) + "\n");
  if (!ledger.entries().empty()) std::cout << render_reference_table(ledger);
  if (!a.eval.empty()) {
    const json doc = read_json(a.eval);
    try {
      if (!ledger.entries().empty()) std::cout << "\n";
      std::cout << render_eval_table(eval_report_from_json(doc), {});
    } catch (const json::exception& e) {
      throw ValidationError(a.eval + ": not an evaluation report (" + e.what() + ")");
    }
  }
  if (ledger.entries().empty() && a.eval.empty()) std::cout << "ledger is empty\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dataset labeling, review, evaluation and tracking simulation"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  IngestArgs ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Build a dataset manifest from a frame directory");
  c_ingest->add_option("frames", ingest.frames, "Directory of PNG/JPEG frames")->required()->check(CLI::ExistingDirectory);
  c_ingest->add_option("--out", ingest.out, "Dataset directory to create")->required();
  c_ingest->add_option("--pattern", ingest.pattern, "Glob for frame file names");
  c_ingest->add_option("--shift", ingest.shifts, "Frame id marking a scenario shift");
  c_ingest->add_option("--shift-file", ingest.shift_file, "File of scenario-shift frame ids");
  c_ingest->add_option("--classes", ingest.classes, "Class names in id order");
  c_ingest->add_flag("--force", ingest.force, "Replace an existing dataset");

  LabelArgs label;
  auto* c_label = app.add_subcommand("label", "Run a detector and NMS over every frame");
  c_label->add_option("dataset", label.dataset)->envname("ALDOT_DATASET");
  c_label->add_option("--detector", label.detector, "oracle | cmd | url");
  c_label->add_option("--cmd", label.command, "Detector command line (NDJSON over stdio)");
  c_label->add_option("--url", label.url, "Detector endpoint (JSON over HTTP POST)");
  c_label->add_option("--timeout-ms", label.timeout_ms, "Per-frame detector timeout");
  c_label->add_option("--nms-iou", label.nms_iou);
  c_label->add_option("--seed", label.seed);
  c_label->add_option("--model-name", label.model_name, "Recorded as the boxes' source model");
  c_label->add_option("--jitter", label.jitter, "Oracle center jitter sigma");
  c_label->add_option("--size-jitter", label.size_jitter, "Oracle size jitter sigma");
  c_label->add_option("--miss-rate", label.miss_rate);
  c_label->add_option("--fp-rate", label.fp_rate, "Oracle false positives per frame");
  c_label->add_option("--conf-mean", label.conf_mean);
  c_label->add_option("--conf-sigma", label.conf_sigma);
  c_label->add_option("--warmup-frames", label.warmup_frames);
  c_label->add_flag("--force", label.force, "Replace existing model labels");

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample", "Draw frames for human review");
  c_sample->add_option("dataset", sample.dataset)->envname("ALDOT_DATASET");
  c_sample->add_option("--n", sample.n, "Sample size (default from --sigma or 100)");
  c_sample->add_option("--sigma", sample.sigma, "Population sigma for sample sizing");
  c_sample->add_option("--margin", sample.margin);
  c_sample->add_option("--confidence", sample.confidence, "Confidence level for sample sizing");
  c_sample->add_option("--strategy", sample.strategy, "uniform | scenario-shift");
  c_sample->add_flag("--strict", sample.strict, "Fail when no frame is marked as a scenario shift");
  c_sample->add_option("--seed", sample.seed);
  c_sample->add_option("--threshold", sample.threshold, "Confidence floor applied on review");
  c_sample->add_option("--session-id", sample.session_id);
  c_sample->add_flag("--force", sample.force, "Replace a session with a different sample");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("review-serve", "Serve a review session over HTTP");
  c_serve->add_option("dataset", serve.dataset)->envname("ALDOT_DATASET");
  c_serve->add_option("--session", serve.session_id)->required();
  c_serve->add_option("--bind", serve.bind);
  c_serve->add_option("--port", serve.port, "0 picks a free port");
  c_serve->add_option("--static", serve.static_dir, "Directory of client assets");
  c_serve->add_option("--port-file", serve.port_file, "Write the bound port here");

  FilterArgs filter;
  auto* c_filter = app.add_subcommand("filter", "Apply review verdicts and the confidence floor");
  c_filter->add_option("dataset", filter.dataset)->envname("ALDOT_DATASET");
  c_filter->add_option("--session", filter.session_id);
  c_filter->add_option("--threshold", filter.threshold);

  ConvertArgs convert;
  auto* c_convert = app.add_subcommand("convert", "Convert between darknet datasets and COCO JSON");
  c_convert->add_option("input", convert.input, "Dataset directory or COCO file")->required();
  c_convert->add_option("--from", convert.from, "darknet | coco");
  c_convert->add_option("--to", convert.to, "coco | darknet");
  c_convert->add_option("--out", convert.out);
  c_convert->add_flag("--force", convert.force);

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "Score predictions against ground truth");
  c_eval->add_option("dataset", eval.dataset)->envname("ALDOT_DATASET");
  c_eval->add_option("--pred", eval.pred, "Directory of <frame_id>.txt predictions")->required();
  c_eval->add_option("--truth", eval.truth, "Directory of truth labels (default: manifest)");
  c_eval->add_option("--iou", eval.iou);
  c_eval->add_option("--conf", eval.conf, "Confidence cut for precision and recall");
  c_eval->add_option("--out", eval.out, "Write the report as JSON");
  c_eval->add_flag("--force", eval.force);

  SimulateArgs simulate;
  auto* c_sim = app.add_subcommand("simulate", "Run a closed-loop tracking episode");
  c_sim->add_option("--episode", simulate.episode, "Episode config JSON");
  c_sim->add_option("--seed", simulate.seed);
  c_sim->add_option("--duration", simulate.duration);
  c_sim->add_option("--latency", simulate.latency, "Oracle detection latency in seconds");
  c_sim->add_option("--out", simulate.out, "Directory for episode.csv and summary.json");
  c_sim->add_flag("--force", simulate.force);

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Render the reference ledger and evaluation tables");
  c_report->add_option("--ledger", report.ledger);
  c_report->add_option("--add", report.add, "Reference metrics document to record");
  c_report->add_option("--eval", report.eval, "Evaluation report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("validation", e.what(), kExitValidation);
  }

  try {
    if (c_ingest->parsed()) return run_ingest(ingest);
    if (c_label->parsed()) return run_label(label);
    if (c_sample->parsed()) return run_sample(sample);
    if (c_serve->parsed()) return run_serve(serve);
    if (c_filter->parsed()) return run_filter(filter);
    if (c_convert->parsed()) return run_convert(convert);
    if (c_eval->parsed()) return run_evaluate(eval);
    if (c_sim->parsed()) return run_simulate(simulate);
    if (c_report->parsed()) return run_report(report);
  } catch (const Error& e) {
    return fail(to_string(e.kind()), e.what(), exit_code_for(e.kind()));
  } catch (const json::exception& e) {
    return fail("validation", e.what(), kExitValidation);
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what(), kExitIo);
  }
  return kExitValidation;
}
