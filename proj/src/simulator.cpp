#include "aldot/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numbers>

#include "aldot/random.hpp"

using nlohmann::json;

namespace aldot::sim {

// ---- camera and projection ---------------------------------------------------

double CameraModel::vertical_fov() const {
  if (vertical_fov_override) return *vertical_fov_override;
  const double aspect = static_cast<double>(image_height) / static_cast<double>(image_width);
  return 2.0 * std::atan(std::tan(horizontal_fov / 2.0) * aspect);
}

double CameraModel::half_footprint_x(double z) const { return z * std::tan(horizontal_fov / 2.0); }

double CameraModel::half_footprint_y(double z) const { return z * std::tan(vertical_fov() / 2.0); }

void validate(const CameraModel& cam) {
  if (cam.image_width <= 0 || cam.image_height <= 0)
    throw ValidationError("camera: image dimensions must be positive");
  const auto fov_ok = [](double f) { return f > 0.0 && f < std::numbers::pi; };
  if (!fov_ok(cam.horizontal_fov)) throw ValidationError("camera: horizontal FOV must lie in (0, pi)");
  if (!fov_ok(cam.vertical_fov())) throw ValidationError("camera: vertical FOV must lie in (0, pi)");
}

void validate(const WorldState& w) {
  if (!(w.drone.z > 0.0)) throw ValidationError("world: altitude must be positive");
  if (!(w.target.diameter > 0.0)) throw ValidationError("world: target diameter must be positive");
  if (!(w.target.speed >= 0.0)) throw ValidationError("world: target speed must be non-negative");
}

double Offset::norm() const { return std::hypot(x, y); }

Offset target_offset(const WorldState& w, const CameraModel& cam) {
  return {(w.target.x - w.drone.x) / (2.0 * cam.half_footprint_x(w.drone.z)),
          (w.target.y - w.drone.y) / (2.0 * cam.half_footprint_y(w.drone.z))};
}

std::optional<BoundingBox> project_target(const WorldState& w, const CameraModel& cam) {
  validate(cam);
  validate(w);
  const Offset off = target_offset(w, cam);
  BoundingBox b;
  b.cx = 0.5 + off.x;
  b.cy = 0.5 + off.y;
  if (b.cx < 0.0 || b.cx > 1.0 || b.cy < 0.0 || b.cy > 1.0) return std::nullopt;
  b.w = std::min(1.0, w.target.diameter / (2.0 * cam.half_footprint_x(w.drone.z)));
  b.h = std::min(1.0, w.target.diameter / (2.0 * cam.half_footprint_y(w.drone.z)));
  return b;
}

double plan_altitude(const CameraModel& cam, double target_diameter, double min_pixels) {
  validate(cam);
  if (!(target_diameter > 0.0)) throw ValidationError("plan_altitude: diameter must be positive");
  if (!(min_pixels > 0.0)) throw ValidationError("plan_altitude: min_pixels must be positive");
  if (min_pixels > cam.image_width)
    throw ValidationError("plan_altitude: infeasible, " + std::to_string(min_pixels) +
                          " px exceeds the image width " + std::to_string(cam.image_width));
  return target_diameter * cam.image_width /
         (min_pixels * 2.0 * std::tan(cam.horizontal_fov / 2.0));
}

// ---- controller ------------------------------------------------------------------

void validate(const ControllerConfig& c) {
  if (!(c.kp >= 0.0) || !(c.kd >= 0.0)) throw ValidationError("controller: gains must be non-negative");
  if (!(c.max_speed > 0.0)) throw ValidationError("controller: max_speed must be positive");
  if (!(c.deadband >= 0.0)) throw ValidationError("controller: deadband must be non-negative");
}

ControlCommand control_step(const std::optional<BoundingBox>& detection,
                            const std::optional<Offset>& prev_offset, const ControllerConfig& cfg,
                            double dt) {
  if (!(dt > 0.0)) throw ValidationError("control_step: dt must be positive");
  validate(cfg);
  ControlCommand cmd;
  if (!detection) {
    cmd.coasting = true;
    return cmd;
  }
  const Offset off{detection->cx - 0.5, detection->cy - 0.5};
  cmd.offset = off;
  if (off.norm() < cfg.deadband) return cmd;
  double vx = cfg.kp * off.x;
  double vy = cfg.kp * off.y;
  if (prev_offset && cfg.kd > 0.0) {
    vx += cfg.kd * (off.x - prev_offset->x) / dt;
    vy += cfg.kd * (off.y - prev_offset->y) / dt;
  }
  const double speed = std::hypot(vx, vy);
  if (speed > cfg.max_speed) {
    vx *= cfg.max_speed / speed;
    vy *= cfg.max_speed / speed;
  }
  cmd.vx = vx;
  cmd.vy = vy;
  return cmd;
}

// ---- episode loop --------------------------------------------------------------

void validate(const EpisodeConfig& cfg) {
  validate(cfg.camera);
  validate(cfg.initial);
  validate(cfg.controller);
  if (!(cfg.duration > 0.0)) throw ValidationError("episode: duration must be positive");
  if (!(cfg.fps.min_fps > 0.0) || !(cfg.fps.max_fps >= cfg.fps.min_fps))
    throw ValidationError("episode: FPS schedule must be a positive interval");
  if (!(cfg.detector.nms_iou >= 0.0 && cfg.detector.nms_iou <= 1.0))
    throw ValidationError("episode: NMS IoU threshold must lie in [0, 1]");
  if (cfg.motion.model == MotionModel::waypoint_loop && cfg.motion.waypoints.empty())
    throw ValidationError("episode: waypoint motion needs at least one waypoint");
  if (cfg.motion.model == MotionModel::random_turn &&
      (!(cfg.motion.room_width > 0.0) || !(cfg.motion.room_height > 0.0)))
    throw ValidationError("episode: room dimensions must be positive");
  if (!(cfg.motion.turn_sigma >= 0.0)) throw ValidationError("episode: turn_sigma must be non-negative");
}

namespace {

double reflect(double v, double hi, bool& bounced) {
  bounced = false;
  // Loop handles steps longer than the room itself.
  while (v < 0.0 || v > hi) {
    v = v < 0.0 ? -v : 2.0 * hi - v;
    bounced = !bounced;
  }
  return v;
}

class TargetMover {
 public:
  TargetMover(const TargetMotion& motion, std::uint64_t seed) : motion_(motion), rng_(seed) {}

  void advance(TargetState& t, double dt) {
    switch (motion_.model) {
      case MotionModel::constant_velocity:
        t.x += t.speed * std::cos(t.heading) * dt;
        t.y += t.speed * std::sin(t.heading) * dt;
        break;
      case MotionModel::waypoint_loop: {
        double budget = t.speed * dt;
        // Bounded so a zero-length loop of identical waypoints cannot spin forever.
        for (std::size_t hops = 0; budget > 0.0 && hops <= motion_.waypoints.size(); ++hops) {
          const auto [wx, wy] = motion_.waypoints[next_];
          const double dist = std::hypot(wx - t.x, wy - t.y);
          if (dist > 0.0) t.heading = std::atan2(wy - t.y, wx - t.x);
          if (dist > budget) {
            t.x += budget * std::cos(t.heading);
            t.y += budget * std::sin(t.heading);
            budget = 0.0;
          } else {
            t.x = wx;
            t.y = wy;
            budget -= dist;
            next_ = (next_ + 1) % motion_.waypoints.size();
          }
        }
        break;
      }
      case MotionModel::random_turn: {
        t.heading += motion_.turn_sigma * std::sqrt(dt) * rng_.normal();
        bool bx = false;
        bool by = false;
        t.x = reflect(t.x + t.speed * std::cos(t.heading) * dt, motion_.room_width, bx);
        t.y = reflect(t.y + t.speed * std::sin(t.heading) * dt, motion_.room_height, by);
        if (bx) t.heading = std::numbers::pi - t.heading;
        if (by) t.heading = -t.heading;
        t.heading = std::remainder(t.heading, 2.0 * std::numbers::pi);
        break;
      }
    }
  }

 private:
  const TargetMotion& motion_;
  Rng rng_;
  std::size_t next_ = 0;
};

struct InFlight {
  double available_at;
  double captured_at;
  std::optional<BoundingBox> box;
};

}  // namespace

EpisodeLog run_episode(const EpisodeConfig& cfg) {
  validate(cfg);
  if (cfg.detector.kind == DetectorSettings::Kind::external) {
    ExternalDetector detector(cfg.detector.external);
    return run_episode(cfg, detector, 0.0);
  }
  OracleNoiseModel model = cfg.detector.oracle;
  model.seed = mix_seed(cfg.seed ^ mix_seed(model.seed));
  OracleDetector detector(model);
  return run_episode(cfg, detector, model.latency_mean);
}

EpisodeLog run_episode(const EpisodeConfig& cfg, Detector& detector, double empty_result_latency) {
  validate(cfg);
  Rng fps_rng(mix_seed(cfg.seed ^ 0x6670735f72617465ULL));
  TargetMover mover(cfg.motion, mix_seed(cfg.seed ^ 0x746172676574ULL));

  WorldState world = cfg.initial;
  world.time = 0.0;
  ControlCommand last;
  std::optional<Offset> prev_offset;
  std::deque<InFlight> in_flight;
  std::optional<InFlight> latest;

  EpisodeLog log;
  const std::int64_t expected =
      static_cast<std::int64_t>(std::ceil(cfg.duration * cfg.fps.max_fps)) + 1;
  log.steps.reserve(static_cast<std::size_t>(expected));
  std::vector<double> times{0.0};
  double tracked_run = 0.0;
  double offset_sum = 0.0;
  std::int64_t in_frame = 0;
  const double tolerance = 1e-9;
  const std::string frame_prefix = "step-";

  for (std::int64_t k = 0;; ++k) {
    const double fps = cfg.fps.min_fps == cfg.fps.max_fps
                           ? cfg.fps.min_fps
                           : fps_rng.uniform(cfg.fps.min_fps, cfg.fps.max_fps);
    const double dt = 1.0 / fps;
    if (world.time + dt > cfg.duration + tolerance) break;

    mover.advance(world.target, dt);
    world.drone.vx = last.vx;
    world.drone.vy = last.vy;
    world.drone.x += last.vx * dt;
    world.drone.y += last.vy * dt;
    world.time += dt;

    StepRecord rec;
    rec.index = k;
    rec.time = world.time;
    rec.dt = dt;
    const std::optional<BoundingBox> truth = project_target(world, cfg.camera);
    rec.target_in_frame = truth.has_value();

    // Submit this frame; its result becomes usable after the detector latency.
    FrameRequest req{frame_prefix + std::to_string(k), cfg.camera.image_width,
                     cfg.camera.image_height, "", static_cast<std::uint64_t>(k)};
    try {
      std::vector<BoundingBox> truths;
      if (truth) truths.push_back(*truth);
      const auto kept = nms(detector.detect(req, truths), cfg.detector.nms_iou);
      InFlight f{world.time + empty_result_latency, world.time, std::nullopt};
      if (!kept.empty()) {
        f.box = kept.front().box;
        f.available_at = world.time + kept.front().latency;
      }
      in_flight.push_back(f);
    } catch (const Error&) {
      if (cfg.on_detector_failure == FailurePolicy::abort) throw;
      rec.detector_failed = true;
      ++log.summary.detector_failures;
    }
    for (auto it = in_flight.begin(); it != in_flight.end();) {
      if (it->available_at <= world.time + 1e-12) {
        if (!latest || it->captured_at > latest->captured_at) latest = *it;
        it = in_flight.erase(it);
      } else {
        ++it;
      }
    }

    if (latest && latest->box) {
      rec.detection = latest->box;
      rec.detection_age = world.time - latest->captured_at;
    }
    ControlCommand cmd = control_step(rec.detection, prev_offset, cfg.controller, dt);
    if (cmd.coasting && cfg.controller.coast == CoastPolicy::continue_last) {
      cmd.vx = last.vx;
      cmd.vy = last.vy;
    }
    prev_offset = cmd.offset;
    last = cmd;
    rec.command = cmd;

    rec.drone = world.drone;
    rec.target = world.target;
    rec.true_offset = target_offset(world, cfg.camera);
    rec.pixel_offset = std::hypot(rec.true_offset.x * cfg.camera.image_width,
                                  rec.true_offset.y * cfg.camera.image_height);

    offset_sum += rec.pixel_offset;
    if (rec.target_in_frame) {
      ++in_frame;
      tracked_run += dt;
      log.summary.longest_tracked = std::max(log.summary.longest_tracked, tracked_run);
    } else {
      tracked_run = 0.0;
    }
    log.summary.max_command_speed = std::max(log.summary.max_command_speed, std::hypot(cmd.vx, cmd.vy));
    times.push_back(world.time);
    log.steps.push_back(std::move(rec));
  }

  auto& s = log.summary;
  s.steps = static_cast<std::int64_t>(log.steps.size());
  s.duration = world.time;
  if (s.steps > 0) {
    s.in_frame_fraction = static_cast<double>(in_frame) / static_cast<double>(s.steps);
    s.mean_pixel_offset = offset_sum / static_cast<double>(s.steps);
    s.mean_offset_fraction = s.mean_pixel_offset / cfg.camera.image_width;
  }
  if (times.size() >= 2) s.fps = fps_meter(times);
  return log;
}

// ---- export ----------------------------------------------------------------------

namespace {

void put(std::string& out, double v) {
  char buf[40];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

}  // namespace

std::string episode_csv(const EpisodeLog& log) {
  std::string out =
      "step,time,dt,drone_x,drone_y,drone_z,drone_vx,drone_vy,target_x,target_y,target_heading,"
      "in_frame,det_cx,det_cy,det_w,det_h,det_confidence,det_age,offset_x,offset_y,pixel_offset,"
      "cmd_vx,cmd_vy,coasting,detector_failed\n";
  for (const auto& r : log.steps) {
    out += std::to_string(r.index);
    for (double v : {r.time, r.dt, r.drone.x, r.drone.y, r.drone.z, r.drone.vx, r.drone.vy,
                     r.target.x, r.target.y, r.target.heading}) {
      out += ',';
      put(out, v);
    }
    out += r.target_in_frame ? ",1" : ",0";
    if (r.detection) {
      for (double v : {r.detection->cx, r.detection->cy, r.detection->w, r.detection->h,
                       r.detection->confidence.value_or(0.0), r.detection_age}) {
        out += ',';
        put(out, v);
      }
    } else {
      out += ",,,,,,";
    }
    for (double v : {r.true_offset.x, r.true_offset.y, r.pixel_offset, r.command.vx, r.command.vy}) {
      out += ',';
      put(out, v);
    }
    out += r.command.coasting ? ",1" : ",0";
    out += r.detector_failed ? ",1\n" : ",0\n";
  }
  return out;
}

json episode_summary_json(const EpisodeLog& log, const EpisodeConfig& cfg) {
  const auto& s = log.summary;
  return {{"synthetic", true},
          {"note", "simulated world with synthetic defaults; not flight data"},
          {"seed", cfg.seed},
          {"config", to_json(cfg)},
          {"steps", s.steps},
          {"duration", s.duration},
          {"longest_tracked", s.longest_tracked},
          {"in_frame_fraction", s.in_frame_fraction},
          {"mean_pixel_offset", s.mean_pixel_offset},
          {"mean_offset_fraction", s.mean_offset_fraction},
          {"max_command_speed", s.max_command_speed},
          {"detector_failures", s.detector_failures},
          {"fps", to_json(s.fps)}};
}

// ---- config documents ------------------------------------------------------------

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

const char* to_string(MotionModel m) {
  switch (m) {
    case MotionModel::constant_velocity: return "constant-velocity";
    case MotionModel::waypoint_loop: return "waypoint-loop";
    case MotionModel::random_turn: return "random-turn";
  }
  return "unknown";
}

MotionModel motion_from_string(const std::string& s) {
  if (s == "constant-velocity") return MotionModel::constant_velocity;
  if (s == "waypoint-loop") return MotionModel::waypoint_loop;
  if (s == "random-turn") return MotionModel::random_turn;
  throw ValidationError("episode: unknown motion model '" + s + "'");
}

}  // namespace

EpisodeConfig episode_config_from_json(const json& doc) {
  try {
    EpisodeConfig c;
    c.initial.target.speed = 0.3;
    c.initial.target.x = 2.5;
    c.initial.target.y = 2.5;
    c.initial.drone.x = 2.5;
    c.initial.drone.y = 2.5;
    c.seed = doc.value("seed", std::uint64_t{0});
    c.duration = doc.value("duration", 60.0);

    if (doc.contains("camera")) {
      const json& j = doc["camera"];
      c.camera.image_width = j.value("image_width", c.camera.image_width);
      c.camera.image_height = j.value("image_height", c.camera.image_height);
      c.camera.horizontal_fov = j.value("horizontal_fov_deg", 60.0) * kDeg;
      if (j.contains("vertical_fov_deg")) c.camera.vertical_fov_override = j["vertical_fov_deg"].get<double>() * kDeg;
    }
    const json world = doc.value("world", json::object());
    const json target = world.value("target", json::object());
    auto& t = c.initial.target;
    t.x = target.value("x", t.x);
    t.y = target.value("y", t.y);
    t.heading = target.value("heading_deg", 0.0) * kDeg;
    t.speed = target.value("speed", t.speed);
    t.diameter = target.value("diameter", t.diameter);
    const json drone = world.value("drone", json::object());
    auto& d = c.initial.drone;
    d.x = drone.value("x", t.x);
    d.y = drone.value("y", t.y);
    if (drone.contains("z")) {
      d.z = drone["z"].get<double>();
    } else {
      d.z = plan_altitude(c.camera, t.diameter, world.value("min_pixels", 64.0));
    }

    const json ctl = doc.value("controller", json::object());
    c.controller.kp = ctl.value("kp", c.controller.kp);
    c.controller.kd = ctl.value("kd", c.controller.kd);
    c.controller.max_speed = ctl.value("max_speed", c.controller.max_speed);
    c.controller.deadband = ctl.value("deadband", c.controller.deadband);
    const std::string coast = ctl.value("coast", "hold");
    if (coast == "hold") c.controller.coast = CoastPolicy::hold;
    else if (coast == "continue") c.controller.coast = CoastPolicy::continue_last;
    else throw ValidationError("episode: coast must be 'hold' or 'continue'");

    const json mot = doc.value("motion", json::object());
    c.motion.model = motion_from_string(mot.value("model", "random-turn"));
    c.motion.room_width = mot.value("room_width", c.motion.room_width);
    c.motion.room_height = mot.value("room_height", c.motion.room_height);
    c.motion.turn_sigma = mot.value("turn_sigma", c.motion.turn_sigma);
    for (const json& w : mot.value("waypoints", json::array()))
      c.motion.waypoints.emplace_back(w.at(0).get<double>(), w.at(1).get<double>());

    const json fps = doc.value("fps", json::object());
    c.fps.min_fps = fps.value("min", c.fps.min_fps);
    c.fps.max_fps = fps.value("max", c.fps.min_fps);

    const json det = doc.value("detector", json::object());
    c.detector.nms_iou = det.value("nms_iou", c.detector.nms_iou);
    const std::string kind = det.value("type", "oracle");
    if (kind == "oracle") {
      const json n = det.value("noise", json::object());
      auto& m = c.detector.oracle;
      m.center_jitter_sigma = n.value("center_jitter_sigma", m.center_jitter_sigma);
      m.size_jitter_sigma = n.value("size_jitter_sigma", m.size_jitter_sigma);
      m.miss_rate = n.value("miss_rate", m.miss_rate);
      m.false_positive_rate = n.value("false_positive_rate", m.false_positive_rate);
      m.confidence_mean = n.value("confidence_mean", m.confidence_mean);
      m.confidence_sigma = n.value("confidence_sigma", m.confidence_sigma);
      m.latency_mean = n.value("latency_mean", m.latency_mean);
      m.latency_jitter = n.value("latency_jitter", m.latency_jitter);
      m.warmup.frames = n.value("warmup_frames", m.warmup.frames);
      m.warmup.initial_low = n.value("warmup_low", m.warmup.initial_low);
      m.warmup.initial_high = n.value("warmup_high", m.warmup.initial_high);
      m.seed = n.value("seed", m.seed);
      validate(m);
    } else if (kind == "external-cmd" || kind == "external-url") {
      c.detector.kind = DetectorSettings::Kind::external;
      auto& e = c.detector.external;
      e.timeout = std::chrono::milliseconds(det.value("timeout_ms", 2000));
      if (kind == "external-cmd") {
        e.transport = ExternalDetectorConfig::Transport::process;
        e.command = det.at("command").get<std::vector<std::string>>();
      } else {
        e.transport = ExternalDetectorConfig::Transport::http;
        e.url = det.at("url").get<std::string>();
      }
    } else {
      throw ValidationError("episode: unknown detector type '" + kind + "'");
    }
    const std::string policy = doc.value("on_detector_failure", "coast");
    if (policy == "coast") c.on_detector_failure = FailurePolicy::coast;
    else if (policy == "abort") c.on_detector_failure = FailurePolicy::abort;
    else throw ValidationError("episode: on_detector_failure must be 'coast' or 'abort'");
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("episode config: ") + e.what());
  }
}

json to_json(const EpisodeConfig& c) {
  json camera = {{"image_width", c.camera.image_width},
                 {"image_height", c.camera.image_height},
                 {"horizontal_fov_deg", c.camera.horizontal_fov / kDeg}};
  if (c.camera.vertical_fov_override) camera["vertical_fov_deg"] = *c.camera.vertical_fov_override / kDeg;
  json waypoints = json::array();
  for (const auto& [x, y] : c.motion.waypoints) waypoints.push_back({x, y});
  json detector = {{"nms_iou", c.detector.nms_iou}};
  if (c.detector.kind == DetectorSettings::Kind::oracle) {
    const auto& m = c.detector.oracle;
    detector["type"] = "oracle";
    detector["noise"] = {{"center_jitter_sigma", m.center_jitter_sigma},
                         {"size_jitter_sigma", m.size_jitter_sigma},
                         {"miss_rate", m.miss_rate},
                         {"false_positive_rate", m.false_positive_rate},
                         {"confidence_mean", m.confidence_mean},
                         {"confidence_sigma", m.confidence_sigma},
                         {"latency_mean", m.latency_mean},
                         {"latency_jitter", m.latency_jitter},
                         {"warmup_frames", m.warmup.frames},
                         {"warmup_low", m.warmup.initial_low},
                         {"warmup_high", m.warmup.initial_high},
                         {"seed", m.seed}};
  } else {
    const auto& e = c.detector.external;
    detector["timeout_ms"] = e.timeout.count();
    if (e.transport == ExternalDetectorConfig::Transport::process) {
      detector["type"] = "external-cmd";
      detector["command"] = e.command;
    } else {
      detector["type"] = "external-url";
      detector["url"] = e.url;
    }
  }
  return {{"seed", c.seed},
          {"duration", c.duration},
          {"camera", camera},
          {"world",
           {{"drone", {{"x", c.initial.drone.x}, {"y", c.initial.drone.y}, {"z", c.initial.drone.z}}},
            {"target",
             {{"x", c.initial.target.x},
              {"y", c.initial.target.y},
              {"heading_deg", c.initial.target.heading / kDeg},
              {"speed", c.initial.target.speed},
              {"diameter", c.initial.target.diameter}}}}},
          {"controller",
           {{"kp", c.controller.kp},
            {"kd", c.controller.kd},
            {"max_speed", c.controller.max_speed},
            {"deadband", c.controller.deadband},
            {"coast", c.controller.coast == CoastPolicy::hold ? "hold" : "continue"}}},
          {"motion",
           {{"model", to_string(c.motion.model)},
            {"room_width", c.motion.room_width},
            {"room_height", c.motion.room_height},
            {"turn_sigma", c.motion.turn_sigma},
            {"waypoints", waypoints}}},
          {"fps", {{"min", c.fps.min_fps}, {"max", c.fps.max_fps}}},
          {"detector", detector},
          {"on_detector_failure", c.on_detector_failure == FailurePolicy::abort ? "abort" : "coast"}};
}

}  // namespace aldot::sim
