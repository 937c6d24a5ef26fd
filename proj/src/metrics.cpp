#include "aldot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

using nlohmann::json;

namespace aldot {

std::int64_t MatchResult::true_positives() const {
  return std::count_if(detections.begin(), detections.end(),
                       [](const DetectionMatch& m) { return m.true_positive; });
}

std::int64_t MatchResult::false_positives() const {
  return static_cast<std::int64_t>(detections.size()) - true_positives();
}

std::int64_t MatchResult::false_negatives() const {
  return std::count(truth_matched.begin(), truth_matched.end(), false);
}

MatchResult match_detections(std::span<const Detection> detections,
                             std::span<const BoundingBox> truths, double iou_threshold) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0))
    throw ValidationError("match_detections: IoU threshold must lie in [0, 1]");
  MatchResult r;
  r.iou_used = iou_threshold;
  r.truth_matched.assign(truths.size(), false);
  for (const auto& t : truths) {
    validate(t);
    r.truth_class.push_back(t.class_id);
  }

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (const auto& d : detections) validate(d);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return *detections[a].box.confidence > *detections[b].box.confidence;
  });

  for (std::size_t i : order) {
    const Detection& d = detections[i];
    DetectionMatch m;
    m.detection_index = i;
    m.class_id = d.box.class_id;
    m.confidence = *d.box.confidence;
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    double best_any = 0.0;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (truths[t].class_id != d.box.class_id) continue;
      const double v = iou(d.box, truths[t]);
      best_any = std::max(best_any, v);
      if (r.truth_matched[t]) continue;
      if (v > best_iou) {
        best_iou = v;
        best = t;
      }
    }
    if (best && best_iou >= iou_threshold) {
      m.true_positive = true;
      m.truth_index = best;
      m.iou = best_iou;
      r.truth_matched[*best] = true;
    } else {
      m.iou = best_any;
    }
    r.detections.push_back(m);
  }
  return r;
}

std::vector<PrPoint> precision_recall_curve(std::span<const MatchResult> matches, int class_id) {
  std::int64_t positives = 0;
  std::vector<std::pair<double, bool>> scored;
  for (const auto& m : matches) {
    positives += std::count(m.truth_class.begin(), m.truth_class.end(), class_id);
    for (const auto& d : m.detections)
      if (d.class_id == class_id) scored.emplace_back(d.confidence, d.true_positive);
  }
  if (positives == 0) return {};
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  std::vector<PrPoint> curve;
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  for (std::size_t i = 0; i < scored.size();) {
    const double level = scored[i].first;
    // Detections sharing a confidence enter the curve together.
    for (; i < scored.size() && scored[i].first == level; ++i) (scored[i].second ? tp : fp) += 1;
    curve.push_back({level, static_cast<double>(tp) / static_cast<double>(tp + fp),
                     static_cast<double>(tp) / static_cast<double>(positives)});
  }
  return curve;
}

std::optional<double> average_precision(std::span<const MatchResult> matches, int class_id) {
  const bool has_truth = std::any_of(matches.begin(), matches.end(), [&](const MatchResult& m) {
    return std::find(m.truth_class.begin(), m.truth_class.end(), class_id) != m.truth_class.end();
  });
  if (!has_truth) return std::nullopt;
  const auto curve = precision_recall_curve(matches, class_id);
  std::vector<double> envelope(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return std::clamp(ap, 0.0, 1.0);
}

double mean_average_precision(const std::map<int, std::optional<double>>& per_class) {
  double sum = 0.0;
  int n = 0;
  for (const auto& [cls, ap] : per_class) {
    if (!ap) continue;
    sum += *ap;
    ++n;
  }
  if (n == 0) throw ValidationError("mAP undefined: no class has ground truth");
  return sum / n;
}

FpsStats fps_meter(std::span<const double> timestamps, std::size_t window) {
  if (timestamps.size() < 2) throw ValidationError("fps_meter: need at least two timestamps");
  if (window == 0) throw ValidationError("fps_meter: window must be positive");
  FpsStats s;
  s.window = window;
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    const double dt = timestamps[i] - timestamps[i - 1];
    if (!(dt > 0.0) || !std::isfinite(dt))
      throw ValidationError("fps_meter: timestamps must be strictly increasing");
    s.instantaneous.push_back(1.0 / dt);
  }
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    const std::size_t first = i > window ? i - window : 0;
    s.rolling.push_back(static_cast<double>(i - first) / (timestamps[i] - timestamps[first]));
  }
  const auto [lo, hi] = std::minmax_element(s.instantaneous.begin(), s.instantaneous.end());
  s.min = *lo;
  s.max = *hi;
  s.mean = static_cast<double>(timestamps.size() - 1) / (timestamps.back() - timestamps.front());
  return s;
}

EvalReport evaluate(std::span<const FrameEvaluation> frames, double iou_threshold,
                    double confidence_threshold, int class_count) {
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0))
    throw ValidationError("evaluate: confidence threshold must lie in [0, 1]");
  if (class_count < 1) throw ValidationError("evaluate: need at least one class");
  EvalReport rep;
  rep.iou_threshold = iou_threshold;
  rep.confidence_threshold = confidence_threshold;

  std::vector<MatchResult> matches;
  matches.reserve(frames.size());
  std::int64_t truths = 0;
  std::int64_t passed = 0;
  double iou_sum = 0.0;
  for (const auto& f : frames) {
    matches.push_back(match_detections(f.detections, f.truths, iou_threshold));
    truths += static_cast<std::int64_t>(f.truths.size());
    for (const auto& t : f.truths) {
      const bool hit = std::any_of(f.detections.begin(), f.detections.end(), [&](const Detection& d) {
        return d.box.class_id == t.class_id && iou(d.box, t) >= iou_threshold;
      });
      passed += hit ? 1 : 0;
    }
    for (const auto& d : matches.back().detections) {
      if (d.confidence < confidence_threshold) continue;
      if (d.true_positive) {
        ++rep.true_positives;
        iou_sum += d.iou;
      } else {
        ++rep.false_positives;
      }
    }
  }
  rep.false_negatives = truths - rep.true_positives;
  const auto called = rep.true_positives + rep.false_positives;
  if (called > 0) rep.precision = static_cast<double>(rep.true_positives) / static_cast<double>(called);
  if (truths > 0) {
    rep.recall = static_cast<double>(rep.true_positives) / static_cast<double>(truths);
    rep.iou_pass_rate = static_cast<double>(passed) / static_cast<double>(truths);
  }
  if (rep.true_positives > 0) rep.mean_iou_true_positive = iou_sum / static_cast<double>(rep.true_positives);

  for (int c = 0; c < class_count; ++c) rep.average_precision[c] = average_precision(matches, c);
  if (std::any_of(rep.average_precision.begin(), rep.average_precision.end(),
                  [](const auto& kv) { return kv.second.has_value(); }))
    rep.mean_average_precision = mean_average_precision(rep.average_precision);
  return rep;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json to_json(const FpsStats& s) {
  return {{"mean", s.mean}, {"min", s.min}, {"max", s.max}, {"window", s.window},
          {"rolling", s.rolling}};
}

json to_json(const EvalReport& r) {
  json ap = json::object();
  for (const auto& [cls, v] : r.average_precision) ap[std::to_string(cls)] = opt(v);
  json doc = {{"iou_threshold", r.iou_threshold},
              {"confidence_threshold", r.confidence_threshold},
              {"ap_interpolation", "all-point"},
              {"average_precision", ap},
              {"mean_average_precision", opt(r.mean_average_precision)},
              {"precision", r.precision},
              {"recall", r.recall},
              {"true_positives", r.true_positives},
              {"false_positives", r.false_positives},
              {"false_negatives", r.false_negatives},
              {"mean_iou_true_positive", opt(r.mean_iou_true_positive)},
              {"iou_pass_rate", opt(r.iou_pass_rate)}};
  doc["fps"] = r.fps ? to_json(*r.fps) : json(nullptr);
  return doc;
}

namespace {

std::string table_row(const std::string& label, const std::string& value) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-44s %12s\n", label.c_str(), value.c_str());
  return buf;
}

std::string fixed4(std::optional<double> v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *v);
  return buf;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g%%", v * 100.0);
  return buf;
}

std::string rule() { return std::string(57, '-') + "\n"; }

}  // namespace

std::string render_eval_table(const EvalReport& r, const std::vector<std::string>& class_names) {
  std::string out = table_row("Metric", "Result") + rule();
  for (const auto& [cls, ap] : r.average_precision) {
    const std::string name = cls < static_cast<int>(class_names.size())
                                 ? class_names[static_cast<std::size_t>(cls)]
                                 : "class " + std::to_string(cls);
    out += table_row("AP (" + name + ", IoU " + fixed4(r.iou_threshold) + ")", fixed4(ap));
  }
  out += table_row("mAP (all-point)", fixed4(r.mean_average_precision));
  out += table_row("Precision @ conf " + fixed4(r.confidence_threshold), fixed4(r.precision));
  out += table_row("Recall @ conf " + fixed4(r.confidence_threshold), fixed4(r.recall));
  out += table_row("Mean IoU of true positives", fixed4(r.mean_iou_true_positive));
  out += table_row("IoU pass rate", fixed4(r.iou_pass_rate));
  out += table_row("TP / FP / FN", std::to_string(r.true_positives) + " / " +
                                       std::to_string(r.false_positives) + " / " +
                                       std::to_string(r.false_negatives));
  if (r.fps) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f (%.1f-%.1f)", r.fps->mean, r.fps->min, r.fps->max);
    out += table_row("FPS mean (min-max)", buf);
  }
  return out;
}

std::string render_reference_table(const MetricsLedger& ledger) {
  std::string out = table_row("Metrics for Models", "Results") + rule();
  bool first = true;
  for (const auto& e : ledger.entries()) {
    if (!first) out += rule();
    first = false;
    const auto& m = e.metrics;
    for (const auto& [name, value] : m.metrics) {
      char buf[32];
      if (name == "accuracy") {
        out += table_row(m.model + " Accuracy", percent(value));
      } else if (name == "avg_loss") {
        std::snprintf(buf, sizeof buf, "%.4g", value);
        out += table_row(m.model + " Average Loss", buf);
      } else if (name == "iou") {
        out += table_row("Intersection over Union for " + m.model, percent(value));
      } else {
        std::snprintf(buf, sizeof buf, "%.6g", value);
        out += table_row(m.model + " " + name, buf);
      }
    }
    out += table_row("  source: " + m.source, "");
  }
  return out;
}

}  // namespace aldot
