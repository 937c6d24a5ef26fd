#include <doctest.h>

#include <cmath>
#include <numbers>

#include "aldot/simulator.hpp"

using namespace aldot;
using namespace aldot::sim;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

WorldState world_at(double dx, double dy, double z, double tx = 0.0, double ty = 0.0) {
  WorldState w;
  w.drone.x = dx;
  w.drone.y = dy;
  w.drone.z = z;
  w.target.x = tx;
  w.target.y = ty;
  return w;
}

EpisodeConfig straight_line() {
  EpisodeConfig c;
  c.initial.drone.z = plan_altitude(c.camera, 0.34, 64);
  c.initial.target.speed = 0.3;
  c.motion.model = MotionModel::constant_velocity;
  c.seed = 1;
  return c;
}

}  // namespace

TEST_CASE("projection examples") {
  CameraModel cam;
  const auto centered = project_target(world_at(0, 0, 5), cam);
  REQUIRE(centered.has_value());
  CHECK(centered->cx == 0.5);
  CHECK(centered->cy == 0.5);

  cam.horizontal_fov = 90 * kDeg;
  CHECK(cam.half_footprint_x(2.0) == doctest::Approx(2.0));
  const auto right = project_target(world_at(0, 0, 2, 1.0, 0.0), cam);
  REQUIRE(right.has_value());
  CHECK(right->cx == doctest::Approx(0.75));
  CHECK(right->cx * cam.image_width == doctest::Approx(960));
  CHECK(right->w == doctest::Approx(0.34 / 4.0));

  CHECK_FALSE(project_target(world_at(0, 0, 2, 2.0 + 1e-9, 0.0), cam).has_value());
  CHECK(project_target(world_at(0, 0, 2, 2.0 - 1e-9, 0.0), cam).has_value());
  CHECK_FALSE(project_target(world_at(0, 0, 2, 0.0, -cam.half_footprint_y(2.0) - 1e-6), cam).has_value());
}

TEST_CASE("projection offset vanishes as the drone reaches the target") {
  const CameraModel cam;
  for (double tx = -1.0; tx <= 1.0; tx += 0.5) {
    for (double ty = -1.0; ty <= 1.0; ty += 0.5) {
      double prev = 1e9;
      for (double frac = 0.0; frac <= 1.0; frac += 0.125) {
        const WorldState w = world_at(frac * tx, frac * ty, 4.0, tx, ty);
        const auto box = project_target(w, cam);
        REQUIRE(box.has_value());
        const double off = std::hypot(box->cx - 0.5, box->cy - 0.5);
        CHECK(off <= prev + 1e-15);
        prev = off;
      }
      CHECK(prev == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("plan altitude") {
  const CameraModel cam;
  const double z = plan_altitude(cam, 0.34, 64);
  CHECK(z == doctest::Approx(0.34 * 1280 / (64 * 2 * 0.57735026919)).epsilon(1e-9));
  CHECK(std::abs(z - 5.89) < 0.01);
  CHECK(plan_altitude(cam, 0.34, 128) == doctest::Approx(z / 2));
  CHECK(plan_altitude(cam, 0.34, 1280) == doctest::Approx(0.34 / (2 * std::tan(30 * kDeg))));
  CHECK_THROWS_AS(plan_altitude(cam, 0.34, 1281), ValidationError);
  CHECK_THROWS_AS(plan_altitude(cam, 0.0, 64), ValidationError);
  CHECK_THROWS_AS(plan_altitude(cam, 0.34, 0), ValidationError);

  // Inverse: projected width at the planned altitude.
  WorldState w = world_at(0, 0, z);
  w.target.diameter = 0.34;
  CHECK(std::abs(project_target(w, cam)->w * cam.image_width - 64) < 0.5);
}

TEST_CASE("control step examples") {
  const ControllerConfig cfg;
  const BoundingBox centered{0, 0.5, 0.5, 0.1, 0.1, 0.9};
  const ControlCommand zero = control_step(centered, std::nullopt, cfg, 1.0 / 60);
  CHECK(zero.vx == 0.0);
  CHECK(zero.vy == 0.0);
  CHECK_FALSE(zero.coasting);

  const BoundingBox right{0, 0.75, 0.5, 0.1, 0.1, 0.9};
  const ControlCommand r = control_step(right, std::nullopt, cfg, 1.0 / 60);
  CHECK(r.vx == doctest::Approx(0.25));
  CHECK(r.vy == 0.0);
  REQUIRE(r.offset.has_value());
  CHECK(r.offset->x == doctest::Approx(0.25));

  ControllerConfig fast;
  fast.kp = 10;
  fast.max_speed = 0.5;
  const BoundingBox corner{0, 0.9, 0.8, 0.1, 0.1, 0.9};
  const ControlCommand s = control_step(corner, std::nullopt, fast, 1.0 / 60);
  CHECK(std::hypot(s.vx, s.vy) == doctest::Approx(0.5));
  CHECK(s.vy / s.vx == doctest::Approx(0.3 / 0.4));

  const ControlCommand none = control_step(std::nullopt, std::nullopt, cfg, 1.0 / 60);
  CHECK(none.coasting);
  CHECK(none.vx == 0.0);
  CHECK_FALSE(none.offset.has_value());

  ControllerConfig pd;
  pd.kd = 0.5;
  const ControlCommand d = control_step(right, Offset{0.2, 0.0}, pd, 0.1);
  CHECK(d.vx == doctest::Approx(0.25 + 0.5 * 0.05 / 0.1));

  ControllerConfig dead;
  dead.deadband = 0.1;
  const BoundingBox near{0, 0.55, 0.5, 0.1, 0.1, 0.9};
  const ControlCommand db = control_step(near, std::nullopt, dead, 0.1);
  CHECK(db.vx == 0.0);
  CHECK_FALSE(db.coasting);

  CHECK_THROWS_AS(control_step(right, std::nullopt, cfg, 0.0), ValidationError);
  ControllerConfig bad;
  bad.kp = -1;
  CHECK_THROWS_AS(control_step(right, std::nullopt, bad, 0.1), ValidationError);
}

TEST_CASE("straight-line episode") {
  const EpisodeLog log = run_episode(straight_line());
  CHECK(log.steps.size() == 3600);
  CHECK(log.summary.steps == 3600);
  CHECK(log.summary.duration == doctest::Approx(60.0));
  CHECK(log.summary.in_frame_fraction >= 0.99);
  CHECK(log.summary.fps.mean == doctest::Approx(60.0));
  for (std::size_t i = 1; i < log.steps.size(); ++i) CHECK(log.steps[i].time > log.steps[i - 1].time);
}

TEST_CASE("episodes replay exactly") {
  EpisodeConfig c = straight_line();
  c.motion.model = MotionModel::random_turn;
  c.fps = {58, 65};
  c.detector.oracle.center_jitter_sigma = 0.01;
  c.detector.oracle.latency_mean = 0.05;
  c.duration = 10;
  const EpisodeLog a = run_episode(c);
  const EpisodeLog b = run_episode(c);
  CHECK(a.steps == b.steps);
  CHECK(episode_csv(a) == episode_csv(b));
  c.seed = 2;
  CHECK(run_episode(c).steps != a.steps);
}

TEST_CASE("centered stationary target is a fixed point") {
  EpisodeConfig c;
  c.motion.model = MotionModel::constant_velocity;
  c.duration = 5;
  const EpisodeLog log = run_episode(c);
  for (const auto& s : log.steps) {
    CHECK(s.command.vx == 0.0);
    CHECK(s.command.vy == 0.0);
    CHECK(s.drone.x == 0.0);
  }
}

TEST_CASE("commands never exceed max speed") {
  EpisodeConfig c = straight_line();
  c.controller.kp = 20;
  c.controller.kd = 0.5;
  c.controller.max_speed = 0.4;
  c.motion.model = MotionModel::random_turn;
  c.initial.target.speed = 1.0;
  c.fps = {58, 65};
  c.duration = 20;
  const EpisodeLog log = run_episode(c);
  CHECK(log.summary.max_command_speed <= 0.4 + 1e-12);
  for (const auto& s : log.steps) CHECK(std::hypot(s.command.vx, s.command.vy) <= 0.4 + 1e-12);
}

TEST_CASE("offset decays at the discrete-time rate") {
  EpisodeConfig c;
  c.initial.drone.z = plan_altitude(c.camera, 0.34, 64);
  c.initial.drone.x = -1.0;
  c.motion.model = MotionModel::constant_velocity;
  c.duration = 20;
  const double hx = c.camera.half_footprint_x(c.initial.drone.z);
  const double dt = 1.0 / 60;
  const double pole = 1.0 - c.controller.kp * dt / (2 * hx);
  CHECK(std::abs(pole) < 1.0);
  const EpisodeLog log = run_episode(c);
  for (std::size_t k = 0; k < log.steps.size(); k += 37) {
    const double want = (1.0 / (2 * hx)) * std::pow(pole, static_cast<double>(k));
    CHECK(log.steps[k].true_offset.x == doctest::Approx(want).epsilon(1e-9));
  }
  // Monotone approach without overshoot.
  for (std::size_t k = 1; k < log.steps.size(); ++k) {
    CHECK(log.steps[k].true_offset.x <= log.steps[k - 1].true_offset.x);
    CHECK(log.steps[k].true_offset.x > 0.0);
  }

  // A stiffer gain settles the 1 m offset below 5% of width within 3 s.
  c.controller.kp = 3.0;
  c.controller.max_speed = 2.0;
  c.duration = 3;
  const EpisodeLog stiff = run_episode(c);
  CHECK(stiff.steps.back().pixel_offset < 0.05 * c.camera.image_width);
}

TEST_CASE("latency serves stale detections") {
  EpisodeConfig c = straight_line();
  c.detector.oracle.latency_mean = 0.1;
  c.duration = 5;
  const EpisodeLog log = run_episode(c);
  std::size_t with_detection = 0;
  for (const auto& s : log.steps) {
    if (s.time < 0.1 - 1e-9) CHECK_FALSE(s.detection.has_value());
    if (s.detection) {
      ++with_detection;
      CHECK(s.detection_age == doctest::Approx(0.1).epsilon(0.2));
    }
  }
  CHECK(with_detection > log.steps.size() * 9 / 10);
}

TEST_CASE("config json round trip") {
  EpisodeConfig c = straight_line();
  c.fps = {58, 65};
  c.controller.kp = 6;
  c.motion.model = MotionModel::waypoint_loop;
  c.motion.waypoints = {{0, 0}, {1, 0}, {1, 1}};
  c.detector.oracle.latency_mean = 0.1;
  const EpisodeConfig back = episode_config_from_json(to_json(c));
  CHECK(back.fps.min_fps == 58);
  CHECK(back.fps.max_fps == 65);
  CHECK(back.controller.kp == 6);
  CHECK(back.motion.waypoints == c.motion.waypoints);
  CHECK(back.initial.drone == c.initial.drone);
  CHECK(back.initial.target == c.initial.target);
  CHECK(back.detector.oracle.latency_mean == 0.1);
  CHECK(to_json(back) == to_json(c));
  CHECK(run_episode(back).steps == run_episode(c).steps);

  const nlohmann::json summary = episode_summary_json(run_episode(c), c);
  CHECK(summary["synthetic"] == true);

  CHECK_THROWS_AS(episode_config_from_json({{"controller", {{"coast", "maybe"}}}}), ValidationError);
  const EpisodeConfig defaults = episode_config_from_json(nlohmann::json::object());
  CHECK(defaults.controller.kp == 1.0);
  CHECK(defaults.initial.target.speed == doctest::Approx(0.3));
}

TEST_CASE("csv has one row per step") {
  EpisodeConfig c = straight_line();
  c.duration = 1;
  const EpisodeLog log = run_episode(c);
  const std::string csv = episode_csv(log);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == log.steps.size() + 1);
  CHECK(csv.rfind("step,time,dt,", 0) == 0);
}
