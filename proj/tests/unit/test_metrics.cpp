#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "aldot/metrics.hpp"
#include "aldot/random.hpp"

using namespace aldot;
using nlohmann::json;

namespace {

Detection det(double cx, double cy, double w, double h, double conf, int cls = 0) {
  Detection d;
  d.box = {cls, cx, cy, w, h, conf};
  d.frame_id = "f";
  return d;
}

BoundingBox truth(double cx, double cy, double w, double h, int cls = 0) {
  return {cls, cx, cy, w, h, std::nullopt};
}

// Rematches at every distinct threshold and integrates the upper envelope.
double brute_force_ap(const std::vector<FrameEvaluation>& frames, int cls) {
  std::set<double, std::greater<>> levels;
  std::int64_t positives = 0;
  for (const auto& f : frames) {
    for (const auto& d : f.detections)
      if (d.box.class_id == cls) levels.insert(*d.box.confidence);
    for (const auto& t : f.truths) positives += t.class_id == cls;
  }
  std::vector<std::pair<double, double>> pr;  // recall, precision
  for (double level : levels) {
    std::int64_t tp = 0;
    std::int64_t called = 0;
    for (const auto& f : frames) {
      std::vector<Detection> kept;
      for (const auto& d : f.detections)
        if (*d.box.confidence >= level) kept.push_back(d);
      const MatchResult m = match_detections(kept, f.truths, 0.5);
      for (const auto& d : m.detections) {
        if (d.class_id != cls) continue;
        ++called;
        tp += d.true_positive;
      }
    }
    pr.emplace_back(static_cast<double>(tp) / positives, static_cast<double>(tp) / called);
  }
  double ap = 0.0;
  double prev = 0.0;
  std::vector<double> recalls;
  for (const auto& [r, p] : pr) recalls.push_back(r);
  std::sort(recalls.begin(), recalls.end());
  recalls.erase(std::unique(recalls.begin(), recalls.end()), recalls.end());
  for (double r : recalls) {
    double best = 0.0;
    for (const auto& [rr, pp] : pr)
      if (rr >= r) best = std::max(best, pp);
    ap += (r - prev) * best;
    prev = r;
  }
  return ap;
}

json yolo_run() {
  return {{"model", "YOLOv4"},
          {"source", "training report"},
          {"metrics", {{"accuracy", 0.954}, {"avg_loss", 0.1942}, {"iou", 0.95}}}};
}

json mask_run() {
  return {{"model", "Mask R-CNN"},
          {"source", "training report"},
          {"metrics", {{"accuracy", 0.962}, {"avg_loss", 0.0912}, {"iou", 0.97}}}};
}

}  // namespace

TEST_CASE("matching examples") {
  const std::vector<BoundingBox> one{truth(0.5, 0.5, 0.2, 0.2)};
  const std::vector<Detection> exact{det(0.5, 0.5, 0.2, 0.2, 0.9)};
  const MatchResult a = match_detections(exact, one, 0.5);
  REQUIRE(a.detections.size() == 1);
  CHECK(a.detections[0].true_positive);
  CHECK(a.detections[0].iou == doctest::Approx(1.0));
  CHECK(a.false_negatives() == 0);

  const std::vector<Detection> two{det(0.51, 0.5, 0.2, 0.2, 0.8), det(0.5, 0.5, 0.2, 0.2, 0.9)};
  const MatchResult b = match_detections(two, one, 0.5);
  CHECK(b.detections[0].confidence == 0.9);
  CHECK(b.detections[0].true_positive);
  CHECK(b.detections[0].detection_index == 1);
  CHECK_FALSE(b.detections[1].true_positive);
  CHECK(b.true_positives() == 1);
  CHECK(b.false_positives() == 1);

  // IoU 0.4 below threshold.
  const double shift = 0.2 * (1 - 0.4) / (1 + 0.4);
  const std::vector<Detection> off{det(0.5 + shift, 0.5, 0.2, 0.2, 0.9)};
  const MatchResult c = match_detections(off, one, 0.5);
  CHECK_FALSE(c.detections[0].true_positive);
  CHECK(c.detections[0].iou == doctest::Approx(0.4));
  CHECK(c.false_negatives() == 1);

  const std::vector<Detection> other_class{det(0.5, 0.5, 0.2, 0.2, 0.9, 1)};
  CHECK(match_detections(other_class, one, 0.5).false_positives() == 1);
  CHECK_THROWS_AS(match_detections(exact, one, 2.0), ValidationError);
}

TEST_CASE("average precision fixture") {
  // [TP, FP, TP] by descending confidence against two truths.
  FrameEvaluation f;
  f.frame_id = "f";
  f.truths = {truth(0.2, 0.2, 0.1, 0.1), truth(0.7, 0.7, 0.1, 0.1)};
  f.detections = {det(0.2, 0.2, 0.1, 0.1, 0.9), det(0.45, 0.45, 0.1, 0.1, 0.8), det(0.7, 0.7, 0.1, 0.1, 0.7)};
  const std::vector<MatchResult> m{match_detections(f.detections, f.truths, 0.5)};
  const auto ap = average_precision(m, 0);
  REQUIRE(ap.has_value());
  CHECK(std::abs(*ap - (0.5 * 1.0 + 0.5 * (2.0 / 3.0))) <= 1e-9);
  CHECK(std::abs(*ap - brute_force_ap({f}, 0)) <= 1e-12);

  const auto curve = precision_recall_curve(m, 0);
  REQUIRE(curve.size() == 3);
  CHECK(curve[1].precision == doctest::Approx(0.5));
  CHECK(curve[2].recall == 1.0);

  const EvalReport rep = evaluate(std::vector<FrameEvaluation>{f}, 0.5, 0.5, 1);
  REQUIRE(rep.mean_average_precision.has_value());
  CHECK(std::abs(*rep.mean_average_precision - 0.8333333333333333) <= 1e-9);
  CHECK(rep.true_positives == 2);
  CHECK(rep.false_positives == 1);
  CHECK(rep.false_negatives == 0);
  CHECK(rep.precision == doctest::Approx(2.0 / 3.0));
  CHECK(rep.recall == 1.0);
  CHECK(*rep.iou_pass_rate == 1.0);
  CHECK(*rep.mean_iou_true_positive == doctest::Approx(1.0));
}

TEST_CASE("average precision edge cases") {
  const std::vector<BoundingBox> truths{truth(0.3, 0.3, 0.2, 0.2), truth(0.7, 0.7, 0.2, 0.2)};
  const std::vector<Detection> perfect{det(0.3, 0.3, 0.2, 0.2, 0.9), det(0.7, 0.7, 0.2, 0.2, 0.6)};
  CHECK(*average_precision(std::vector<MatchResult>{match_detections(perfect, truths, 0.5)}, 0) == 1.0);
  CHECK(*average_precision(std::vector<MatchResult>{match_detections({}, truths, 0.5)}, 0) == 0.0);
  CHECK_FALSE(average_precision(std::vector<MatchResult>{match_detections(perfect, {}, 0.5)}, 0).has_value());
  CHECK_FALSE(average_precision(std::vector<MatchResult>{match_detections(perfect, truths, 0.5)}, 3).has_value());
}

TEST_CASE("mean average precision") {
  CHECK(mean_average_precision({{0, 0.8333}}) == 0.8333);
  CHECK(mean_average_precision({{0, 0.5}, {1, 1.0}}) == 0.75);
  CHECK(mean_average_precision({{0, 0.5}, {1, std::nullopt}}) == 0.5);
  CHECK_THROWS_AS(mean_average_precision({{0, std::nullopt}}), ValidationError);
  CHECK_THROWS_AS(mean_average_precision({}), ValidationError);
}

TEST_CASE("average precision matches the brute force") {
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    FrameEvaluation f;
    const int nt = 1 + static_cast<int>(rng.below(4));
    for (int i = 0; i < nt; ++i) f.truths.push_back(truth(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.15, 0.15));
    const int nd = static_cast<int>(rng.below(11));
    for (int i = 0; i < nd; ++i) {
      const auto& t = f.truths[rng.below(f.truths.size())];
      // Coarse confidences force ties.
      f.detections.push_back(det(t.cx + rng.uniform(-0.1, 0.1), t.cy + rng.uniform(-0.1, 0.1), 0.15, 0.15,
                                 std::round(rng.uniform01() * 5) / 5));
    }
    const auto ap = average_precision(std::vector<MatchResult>{match_detections(f.detections, f.truths, 0.5)}, 0);
    REQUIRE(ap.has_value());
    CHECK(std::abs(*ap - brute_force_ap({f}, 0)) <= 1e-12);
  }
}

TEST_CASE("fps meter") {
  std::vector<double> ts;
  for (int i = 0; i <= 120; ++i) ts.push_back(i / 60.0);
  const FpsStats c = fps_meter(ts);
  CHECK(c.mean == doctest::Approx(60.0).epsilon(1e-12));
  CHECK(c.instantaneous.size() == 120);
  CHECK(c.rolling.size() == 120);
  CHECK(c.rolling.back() == doctest::Approx(60.0));

  std::vector<double> alt{0.0};
  for (int i = 0; i < 100; ++i) alt.push_back(alt.back() + (i % 2 ? 1.0 / 65.0 : 1.0 / 58.0));
  const FpsStats a = fps_meter(alt, 10);
  CHECK(a.min == doctest::Approx(58.0));
  CHECK(a.max == doctest::Approx(65.0));
  CHECK(a.mean == doctest::Approx(2.0 / (1.0 / 58 + 1.0 / 65)));
  CHECK(std::abs(a.mean - 61.3) < 0.05);

  const std::vector<double> two{1.0, 1.5};
  const FpsStats t = fps_meter(two);
  CHECK(t.instantaneous.size() == 1);
  CHECK(t.mean == 2.0);

  const std::vector<double> bad{0.0, 0.1, 0.1};
  CHECK_THROWS_AS(fps_meter(bad), ValidationError);
  CHECK_THROWS_AS(fps_meter(std::vector<double>{1.0}), ValidationError);
  CHECK_THROWS_AS(fps_meter(two, 0), ValidationError);
}

TEST_CASE("reference metrics ledger") {
  MetricsLedger ledger;
  const auto first = ledger.record(yolo_run());
  CHECK(first.inserted);
  CHECK(first.entry.metrics.metrics.at("accuracy") == 0.954);
  CHECK(first.entry.metrics.metrics.at("avg_loss") == 0.1942);
  CHECK(first.entry.metrics.metrics.at("iou") == 0.95);
  CHECK(first.entry.content_hash.size() == 64);
  const auto mask = ledger.record(mask_run());
  CHECK(mask.inserted);
  CHECK(mask.entry.metrics.metrics.at("avg_loss") == 0.0912);
  CHECK_FALSE(ledger.record(yolo_run()).inserted);
  CHECK(ledger.entries().size() == 2);

  const MetricsLedger back = MetricsLedger::from_json(ledger.to_json());
  REQUIRE(back.entries().size() == 2);
  CHECK(back.entries()[1].metrics.metrics.at("iou") == 0.97);

  const std::string table = render_reference_table(ledger);
  CHECK(table.find("Metrics for Models") != std::string::npos);
  CHECK(table.find("YOLOv4 Accuracy") != std::string::npos);
  CHECK(table.find("95.4%") != std::string::npos);
  CHECK(table.find("0.1942") != std::string::npos);
  CHECK(table.find("Intersection over Union for Mask R-CNN") != std::string::npos);
  CHECK(table.find("97%") != std::string::npos);
}

TEST_CASE("reference metrics validation") {
  json bad = yolo_run();
  bad["metrics"]["accuracy"] = 1.5;
  CHECK_THROWS_AS(parse_reference_metrics(bad), ValidationError);
  bad = yolo_run();
  bad["metrics"]["avg_loss"] = -0.1;
  CHECK_THROWS_AS(parse_reference_metrics(bad), ValidationError);
  bad = yolo_run();
  bad.erase("model");
  CHECK_THROWS_AS(parse_reference_metrics(bad), ValidationError);
  bad = yolo_run();
  bad["metrics"]["accuracy"] = "high";
  CHECK_THROWS_AS(parse_reference_metrics(bad), ValidationError);
}

TEST_CASE("sha256") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("eval table and json") {
  FrameEvaluation f;
  f.truths = {truth(0.5, 0.5, 0.2, 0.2)};
  f.detections = {det(0.5, 0.5, 0.2, 0.2, 0.9)};
  EvalReport rep = evaluate(std::vector<FrameEvaluation>{f}, 0.5, 0.5, 2);
  CHECK(rep.average_precision.size() == 2);
  CHECK_FALSE(rep.average_precision.at(1).has_value());
  CHECK(*rep.mean_average_precision == 1.0);
  const std::string table = render_eval_table(rep, {"roomba"});
  CHECK(table.find("AP (roomba") != std::string::npos);
  CHECK(table.find("class 1") != std::string::npos);
  CHECK(table.find("n/a") != std::string::npos);
  const json doc = to_json(rep);
  CHECK(doc["average_precision"]["1"].is_null());
  CHECK(doc["mean_average_precision"] == 1.0);
  CHECK(doc["ap_interpolation"] == "all-point");
  CHECK(doc["fps"].is_null());
}
