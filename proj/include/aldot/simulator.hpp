#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aldot/detection.hpp"
#include "aldot/external_detector.hpp"
#include "aldot/geometry.hpp"
#include "aldot/metrics.hpp"

namespace aldot::sim {

/// Nadir-mounted pinhole camera. Image +x follows world +x, image +y follows
/// world +y.
struct CameraModel {
  int image_width = 1280;
  int image_height = 720;
  double horizontal_fov = 1.0471975511965976;  // radians (60 deg)
  /// When absent, derived from the horizontal FOV and the aspect ratio.
  std::optional<double> vertical_fov_override;

  double vertical_fov() const;
  /// Half-extents of the ground footprint at altitude z, in meters.
  double half_footprint_x(double z) const;
  double half_footprint_y(double z) const;
};

void validate(const CameraModel& cam);

struct DroneState {
  double x = 0.0;
  double y = 0.0;
  double z = 5.0;   // altitude, meters
  double vx = 0.0;  // current lateral velocity, m/s
  double vy = 0.0;

  bool operator==(const DroneState&) const = default;
};

struct TargetState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, world frame
  double speed = 0.0;    // m/s
  double diameter = 0.34;

  bool operator==(const TargetState&) const = default;
};

struct WorldState {
  DroneState drone;
  TargetState target;
  double time = 0.0;
};

void validate(const WorldState& world);

/// Target box in normalized image coordinates; absent when the target
/// center is outside the frame.
std::optional<BoundingBox> project_target(const WorldState& world, const CameraModel& cam);

/// Normalized center offset of the target from the image center, without
/// clamping to the frame.
struct Offset {
  double x = 0.0;
  double y = 0.0;

  double norm() const;
  bool operator==(const Offset&) const = default;
};

Offset target_offset(const WorldState& world, const CameraModel& cam);

/// Highest altitude at which the target still spans min_pixels horizontally.
double plan_altitude(const CameraModel& cam, double target_diameter, double min_pixels);

enum class CoastPolicy { hold, continue_last };

struct ControllerConfig {
  double kp = 1.0;         // (m/s) per unit normalized offset
  double kd = 0.0;         // (m/s) per unit normalized offset rate
  double max_speed = 1.0;  // m/s
  double deadband = 0.0;   // normalized offset norm
  CoastPolicy coast = CoastPolicy::hold;
};

void validate(const ControllerConfig& cfg);

struct ControlCommand {
  double vx = 0.0;
  double vy = 0.0;
  /// No detection was available; the command is a hold.
  bool coasting = false;
  /// Measured offset, present whenever a detection was used.
  std::optional<Offset> offset;

  bool operator==(const ControlCommand&) const = default;
};

/// PD law on the box-center offset, saturated to max_speed in norm.
ControlCommand control_step(const std::optional<BoundingBox>& detection,
                            const std::optional<Offset>& prev_offset, const ControllerConfig& cfg,
                            double dt);

enum class MotionModel { constant_velocity, waypoint_loop, random_turn };

struct TargetMotion {
  MotionModel model = MotionModel::random_turn;
  std::vector<std::pair<double, double>> waypoints;
  double room_width = 5.0;   // random-turn targets bounce inside [0, w] x [0, h]
  double room_height = 5.0;
  double turn_sigma = 0.5;   // rad / sqrt(s)
};

/// Per-step frame rate drawn uniformly from [min_fps, max_fps].
struct FpsSchedule {
  double min_fps = 60.0;
  double max_fps = 60.0;
};

enum class FailurePolicy { abort, coast };

struct DetectorSettings {
  enum class Kind { oracle, external };
  Kind kind = Kind::oracle;
  OracleNoiseModel oracle;
  ExternalDetectorConfig external;
  double nms_iou = 0.5;
};

struct EpisodeConfig {
  WorldState initial;
  CameraModel camera;
  ControllerConfig controller;
  TargetMotion motion;
  FpsSchedule fps;
  DetectorSettings detector;
  double duration = 60.0;
  std::uint64_t seed = 0;
  FailurePolicy on_detector_failure = FailurePolicy::coast;
};

void validate(const EpisodeConfig& cfg);

struct StepRecord {
  std::int64_t index = 0;
  double time = 0.0;
  double dt = 0.0;
  DroneState drone;
  TargetState target;
  bool target_in_frame = false;
  std::optional<BoundingBox> detection;  // the (possibly stale) detection used
  double detection_age = 0.0;            // seconds since that detection's frame
  Offset true_offset;
  double pixel_offset = 0.0;  // |true offset| in pixels
  ControlCommand command;
  bool detector_failed = false;

  bool operator==(const StepRecord&) const = default;
};

struct EpisodeSummary {
  std::int64_t steps = 0;
  double duration = 0.0;
  double longest_tracked = 0.0;  // longest in-frame stretch, seconds
  double in_frame_fraction = 0.0;
  double mean_pixel_offset = 0.0;
  double mean_offset_fraction = 0.0;  // mean_pixel_offset / image width
  double max_command_speed = 0.0;
  std::int64_t detector_failures = 0;
  FpsStats fps;
};

struct EpisodeLog {
  std::vector<StepRecord> steps;
  EpisodeSummary summary;
};

/// Runs a fixed-step closed loop with the detector named in `cfg`.
EpisodeLog run_episode(const EpisodeConfig& cfg);

/// Same loop with a caller-provided detector. `empty_result_latency` is
/// how long a frame with no detections takes to come back.
EpisodeLog run_episode(const EpisodeConfig& cfg, Detector& detector,
                       double empty_result_latency = 0.0);

/// One row per step; numbers printed with round-trip precision.
std::string episode_csv(const EpisodeLog& log);

/// Summary, config and seed, flagged as synthetic.
nlohmann::json episode_summary_json(const EpisodeLog& log, const EpisodeConfig& cfg);

/// Parses an episode config document; missing fields take the synthetic
/// defaults (5 x 5 m room, 0.3 m/s target, kp = 1).
EpisodeConfig episode_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const EpisodeConfig& cfg);

}  // namespace aldot::sim
