#include "aldot/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "aldot/random.hpp"

using nlohmann::json;

namespace aldot {

void validate(const Detection& d) {
  if (!d.box.confidence) throw ValidationError("detection without confidence");
  validate(d.box);
  if (!(d.latency >= 0.0) || !std::isfinite(d.latency))
    throw ValidationError("detection latency must be a non-negative number");
}

void validate(const OracleNoiseModel& m) {
  const auto prob = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!prob(m.miss_rate)) throw ValidationError("oracle: miss_rate must lie in [0, 1]");
  if (!prob(m.false_positive_rate))
    throw ValidationError("oracle: false_positive_rate must lie in [0, 1]");
  if (!prob(m.confidence_mean)) throw ValidationError("oracle: confidence_mean must lie in [0, 1]");
  if (!(m.center_jitter_sigma >= 0.0) || !(m.size_jitter_sigma >= 0.0) ||
      !(m.confidence_sigma >= 0.0))
    throw ValidationError("oracle: sigmas must be non-negative");
  if (!(m.latency_mean >= 0.0) || !(m.latency_jitter >= 0.0))
    throw ValidationError("oracle: latency parameters must be non-negative");
  if (!prob(m.warmup.initial_low) || !prob(m.warmup.initial_high) ||
      m.warmup.initial_low > m.warmup.initial_high)
    throw ValidationError("oracle: warm-up confidence range must be an interval inside [0, 1]");
}

OracleDetector::OracleDetector(OracleNoiseModel model) : model_(model) { validate(model_); }

namespace {

double truncated_normal(Rng& rng) {
  double z = rng.normal();
  while (std::abs(z) > 4.0) z = rng.normal();
  return z;
}

}  // namespace

std::vector<Detection> OracleDetector::detect(const FrameRequest& frame,
                                              std::span<const BoundingBox> truth) {
  const OracleNoiseModel& m = model_;
  Rng rng(mix_seed(m.seed ^ mix_seed(stable_hash(frame.frame_id) ^ mix_seed(frame.sequence))));

  const auto draw_confidence = [&] {
    if (frame.sequence < m.warmup.frames) {
      const double settled = static_cast<double>(frame.sequence) / static_cast<double>(m.warmup.frames);
      if (!rng.bernoulli(settled)) return rng.uniform(m.warmup.initial_low, m.warmup.initial_high);
    }
    return std::clamp(m.confidence_mean + m.confidence_sigma * rng.normal(), 0.0, 1.0);
  };
  const auto draw_latency = [&] {
    return std::max(0.0, m.latency_mean + rng.uniform(-m.latency_jitter, m.latency_jitter));
  };

  std::vector<Detection> out;
  for (const BoundingBox& t : truth) {
    validate(t);
    if (rng.bernoulli(m.miss_rate)) continue;
    Detection d;
    d.frame_id = frame.frame_id;
    d.box = t;
    if (m.center_jitter_sigma > 0.0) {
      d.box.cx = std::clamp(t.cx + m.center_jitter_sigma * truncated_normal(rng), 0.0, 1.0);
      d.box.cy = std::clamp(t.cy + m.center_jitter_sigma * truncated_normal(rng), 0.0, 1.0);
    }
    if (m.size_jitter_sigma > 0.0) {
      d.box.w = std::clamp(t.w + m.size_jitter_sigma * truncated_normal(rng), 1e-6, 1.0);
      d.box.h = std::clamp(t.h + m.size_jitter_sigma * truncated_normal(rng), 1e-6, 1.0);
    }
    d.box.confidence = draw_confidence();
    d.latency = draw_latency();
    out.push_back(std::move(d));
  }

  const std::uint64_t spurious = rng.poisson(m.false_positive_rate);
  for (std::uint64_t k = 0; k < spurious; ++k) {
    Detection d;
    d.frame_id = frame.frame_id;
    d.box.class_id = 0;
    d.box.cx = rng.uniform01();
    d.box.cy = rng.uniform01();
    d.box.w = rng.uniform(0.05, 0.2);
    d.box.h = rng.uniform(0.05, 0.2);
    d.box.confidence = draw_confidence();
    d.latency = draw_latency();
    out.push_back(std::move(d));
  }
  return out;
}

bool detection_rank_less(const Detection& a, const Detection& b) {
  const double ca = a.box.confidence.value_or(0.0);
  const double cb = b.box.confidence.value_or(0.0);
  if (ca != cb) return ca > cb;
  return std::tie(a.frame_id, a.box.class_id, a.box.cx, a.box.cy, a.box.w, a.box.h, a.latency) <
         std::tie(b.frame_id, b.box.class_id, b.box.cx, b.box.cy, b.box.w, b.box.h, b.latency);
}

std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold,
                           bool same_class_only) {
  if (!(iou_threshold >= 0.0 && iou_threshold <= 1.0))
    throw ValidationError("nms: IoU threshold must lie in [0, 1]");
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return detection_rank_less(detections[i], detections[j]);
  });

  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const Detection& cand = detections[i];
    validate(cand);
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      if (k.frame_id != cand.frame_id) return false;
      if (same_class_only && k.box.class_id != cand.box.class_id) return false;
      return iou(k.box, cand.box) >= iou_threshold;
    });
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

// ---- wire protocol -------------------------------------------------------------

json request_to_json(const FrameRequest& f) {
  return {{"frame_id", f.frame_id}, {"width", f.width}, {"height", f.height},
          {"image_path", f.image_path}};
}

FrameRequest request_from_json(const json& doc) {
  try {
    FrameRequest f;
    f.frame_id = doc.at("frame_id").get<std::string>();
    f.width = doc.at("width").get<int>();
    f.height = doc.at("height").get<int>();
    f.image_path = doc.at("image_path").get<std::string>();
    return f;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("detector request: ") + e.what());
  }
}

std::string serialize_response(const std::string& frame_id, std::span<const Detection> detections) {
  json boxes = json::array();
  for (const auto& d : detections) {
    validate(d);
    boxes.push_back({{"class_id", d.box.class_id},
                     {"cx", d.box.cx},
                     {"cy", d.box.cy},
                     {"w", d.box.w},
                     {"h", d.box.h},
                     {"confidence", *d.box.confidence}});
  }
  return json{{"frame_id", frame_id}, {"boxes", std::move(boxes)}}.dump();
}

namespace {

[[noreturn]] void protocol_error(const std::string& what, std::string_view payload) {
  constexpr std::size_t kMaxQuoted = 512;
  std::string quoted(payload.substr(0, kMaxQuoted));
  if (payload.size() > kMaxQuoted) quoted += "...";
  throw DetectorError(DetectorError::Reason::protocol,
                      "schema violation: " + what + "; payload: " + quoted);
}

}  // namespace

std::vector<Detection> parse_response(std::string_view payload, std::string_view expected_frame_id,
                                      double latency) {
  json doc;
  try {
    doc = json::parse(payload);
  } catch (const json::parse_error&) {
    protocol_error("response is not valid JSON", payload);
  }
  if (!doc.is_object()) protocol_error("response must be an object", payload);
  if (!doc.contains("frame_id") || !doc["frame_id"].is_string())
    protocol_error("frame_id: missing or not a string", payload);
  if (doc["frame_id"].get<std::string>() != expected_frame_id)
    protocol_error("frame_id: expected '" + std::string(expected_frame_id) + "'", payload);
  if (!doc.contains("boxes") || !doc["boxes"].is_array())
    protocol_error("boxes: missing or not an array", payload);

  std::vector<Detection> out;
  const json& boxes = doc["boxes"];
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const json& jb = boxes[i];
    const std::string where = "boxes[" + std::to_string(i) + "]";
    if (!jb.is_object()) protocol_error(where + ": not an object", payload);
    if (!jb.contains("class_id") || !jb["class_id"].is_number_integer() ||
        jb["class_id"].get<long long>() < 0 || jb["class_id"].get<long long>() > 1'000'000)
      protocol_error(where + ".class_id: missing or not a non-negative integer", payload);
    const auto number = [&](const char* key) {
      if (!jb.contains(key) || !jb[key].is_number())
        protocol_error(where + "." + key + ": missing or not a number", payload);
      return jb[key].get<double>();
    };
    Detection d;
    d.frame_id = std::string(expected_frame_id);
    d.latency = latency;
    d.box.class_id = jb["class_id"].get<int>();
    d.box.cx = number("cx");
    d.box.cy = number("cy");
    d.box.w = number("w");
    d.box.h = number("h");
    const double conf = number("confidence");
    const auto check = [&](const char* key, double v, bool ok, const char* range) {
      if (!ok) protocol_error(where + "." + key + ": " + json(v).dump() + " outside " + range, payload);
    };
    check("cx", d.box.cx, d.box.cx >= 0.0 && d.box.cx <= 1.0, "[0, 1]");
    check("cy", d.box.cy, d.box.cy >= 0.0 && d.box.cy <= 1.0, "[0, 1]");
    check("w", d.box.w, d.box.w > 0.0 && d.box.w <= 1.0, "(0, 1]");
    check("h", d.box.h, d.box.h > 0.0 && d.box.h <= 1.0, "(0, 1]");
    check("confidence", conf, conf >= 0.0 && conf <= 1.0, "[0, 1]");
    d.box.confidence = conf;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace aldot
