#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aldot/detection.hpp"

namespace aldot {

struct DetectionMatch {
  std::size_t detection_index = 0;  // index into the input detections
  int class_id = 0;
  double confidence = 0.0;
  bool true_positive = false;
  std::optional<std::size_t> truth_index;
  double iou = 0.0;  // IoU with the matched truth, or best same-class IoU for FPs
};

/// Matching of one frame's detections against its ground truth.
struct MatchResult {
  /// Detections in processing order (confidence descending, input order on ties).
  std::vector<DetectionMatch> detections;
  std::vector<bool> truth_matched;
  std::vector<int> truth_class;
  double iou_used = 0.5;

  std::int64_t true_positives() const;
  std::int64_t false_positives() const;
  std::int64_t false_negatives() const;
};

/// Greedy matching: each detection, by descending confidence, takes the
/// unmatched same-class truth with the highest IoU if that IoU >= threshold.
MatchResult match_detections(std::span<const Detection> detections,
                             std::span<const BoundingBox> truths, double iou_threshold);

struct PrPoint {
  double confidence = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// One point per distinct confidence level, highest first.
std::vector<PrPoint> precision_recall_curve(std::span<const MatchResult> matches, int class_id);

/// All-point interpolated AP (continuous area under the PR curve where
/// precision at recall r is the max precision at any recall >= r).
/// Absent when the class has no ground truth.
std::optional<double> average_precision(std::span<const MatchResult> matches, int class_id);

/// Unweighted mean over classes with a defined AP.
double mean_average_precision(const std::map<int, std::optional<double>>& per_class);

struct FpsStats {
  double mean = 0.0;  // (N - 1) / (t_last - t_first)
  double min = 0.0;
  double max = 0.0;
  std::size_t window = 30;
  std::vector<double> instantaneous;  // 1 / dt per interval
  std::vector<double> rolling;        // frames / elapsed over the last `window` intervals
};

FpsStats fps_meter(std::span<const double> timestamps, std::size_t window = 30);

struct FrameEvaluation {
  std::string frame_id;
  std::vector<Detection> detections;
  std::vector<BoundingBox> truths;
};

struct EvalReport {
  double iou_threshold = 0.5;
  double confidence_threshold = 0.5;
  std::map<int, std::optional<double>> average_precision;
  std::optional<double> mean_average_precision;
  /// At confidence_threshold; 0 when nothing qualifies.
  double precision = 0.0;
  double recall = 0.0;
  std::int64_t true_positives = 0;
  std::int64_t false_positives = 0;
  std::int64_t false_negatives = 0;
  /// Mean IoU over true positives at confidence_threshold.
  std::optional<double> mean_iou_true_positive;
  /// Share of truths overlapped at >= iou_threshold by any same-class detection.
  std::optional<double> iou_pass_rate;
  std::optional<FpsStats> fps;
};

EvalReport evaluate(std::span<const FrameEvaluation> frames, double iou_threshold,
                    double confidence_threshold, int class_count);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const FpsStats& stats);

/// Fixed-width "metric / result" table.
std::string render_eval_table(const EvalReport& report, const std::vector<std::string>& class_names);

// ---- reference metrics ledger ------------------------------------------------

/// Externally measured training metrics (accuracy, loss, IoU of a trained
/// network). They are recorded as reported, never recomputed here.
struct ReferenceMetrics {
  std::string model;
  std::string source;
  std::map<std::string, double> metrics;
  std::string notes;
};

/// Validates {"model", "source", "metrics": {name: number}, ["notes"]}.
/// accuracy and iou must lie in [0, 1]; avg_loss must be non-negative.
ReferenceMetrics parse_reference_metrics(const nlohmann::json& doc);

struct LedgerEntry {
  nlohmann::json document;  // as submitted
  ReferenceMetrics metrics;
  std::string content_hash;  // SHA-256 of the canonical JSON dump
  std::string recorded_at;
};

class MetricsLedger {
 public:
  struct AddResult {
    const LedgerEntry& entry;
    bool inserted;
  };

  /// Adds a document unless one with the same content hash is present.
  AddResult record(const nlohmann::json& document);

  const std::vector<LedgerEntry>& entries() const noexcept { return entries_; }

  nlohmann::json to_json() const;
  static MetricsLedger from_json(const nlohmann::json& doc);

 private:
  std::vector<LedgerEntry> entries_;
};

std::string sha256_hex(std::string_view data);

/// Two-column table in the "Metrics for Models | Results" layout.
std::string render_reference_table(const MetricsLedger& ledger);

}  // namespace aldot
