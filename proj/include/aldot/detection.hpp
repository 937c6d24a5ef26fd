#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aldot/error.hpp"
#include "aldot/geometry.hpp"

namespace aldot {

/// A detector's output for one object. box.confidence is always set.
struct Detection {
  BoundingBox box;
  std::string frame_id;
  double latency = 0.0;  // seconds from capture to availability

  bool operator==(const Detection&) const = default;
};

void validate(const Detection& d);

/// What a detector is asked about. `sequence` is the frame's position in its
/// stream; it is not part of the wire protocol.
struct FrameRequest {
  std::string frame_id;
  int width = 0;
  int height = 0;
  std::string image_path;
  std::uint64_t sequence = 0;
};

class DetectorError : public Error {
 public:
  enum class Reason { timeout, exited, protocol, launch, transport };

  DetectorError(Reason reason, const std::string& what)
      : Error(ErrorKind::detector, what), reason_(reason) {}

  Reason reason() const noexcept { return reason_; }

 private:
  Reason reason_;
};

/// Pluggable detector. `truth` is only consulted by the oracle.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const FrameRequest& frame,
                                        std::span<const BoundingBox> truth) = 0;
};

/// Confidence ramp mimicking a detector that starts unsure and settles.
/// For frames with sequence < frames, confidence is drawn uniformly from
/// [initial_low, initial_high] with probability 1 - sequence / frames.
struct WarmupSchedule {
  std::uint64_t frames = 0;
  double initial_low = 0.30;
  double initial_high = 0.91;
};

struct OracleNoiseModel {
  double center_jitter_sigma = 0.0;  // normalized units, truncated at 4 sigma
  double size_jitter_sigma = 0.0;    // normalized units, truncated at 4 sigma
  double miss_rate = 0.0;
  double false_positive_rate = 0.0;  // expected spurious boxes per frame
  double confidence_mean = 0.97;
  double confidence_sigma = 0.0;
  double latency_mean = 0.0;    // seconds
  double latency_jitter = 0.0;  // uniform half-width, seconds
  WarmupSchedule warmup;
  std::uint64_t seed = 0;
};

void validate(const OracleNoiseModel& model);

/// Ground-truth detector perturbed by a seeded noise model. The output is a
/// pure function of (model, frame_id, sequence, truth).
class OracleDetector final : public Detector {
 public:
  explicit OracleDetector(OracleNoiseModel model);

  std::vector<Detection> detect(const FrameRequest& frame,
                                std::span<const BoundingBox> truth) override;

  const OracleNoiseModel& model() const noexcept { return model_; }

 private:
  OracleNoiseModel model_;
};

/// Greedy NMS. Order: confidence descending, then frame id, then class and
/// box fields ascending. A detection survives iff its IoU with every kept
/// detection of the same frame (and class, when same_class_only) is below
/// iou_threshold. Output is in that order.
std::vector<Detection> nms(std::span<const Detection> detections, double iou_threshold,
                           bool same_class_only = true);

/// Strict weak order used by nms.
bool detection_rank_less(const Detection& a, const Detection& b);

// ---- external detector wire protocol -----------------------------------------

/// {"frame_id": str, "width": int, "height": int, "image_path": str}
nlohmann::json request_to_json(const FrameRequest& frame);
FrameRequest request_from_json(const nlohmann::json& doc);

/// {"frame_id": str, "boxes": [{"class_id", "cx", "cy", "w", "h", "confidence"}]}
std::string serialize_response(const std::string& frame_id, std::span<const Detection> detections);

/// Validates a response line. Throws DetectorError(protocol) naming the
/// offending field and quoting the payload.
std::vector<Detection> parse_response(std::string_view payload, std::string_view expected_frame_id,
                                      double latency = 0.0);

}  // namespace aldot
