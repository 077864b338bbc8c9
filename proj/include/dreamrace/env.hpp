#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dreamrace/camera.hpp"
#include "dreamrace/errors.hpp"
#include "dreamrace/quad.hpp"
#include "dreamrace/renderer.hpp"
#include "dreamrace/rng.hpp"
#include "dreamrace/track.hpp"

namespace dreamrace {

struct RewardConfig {
  double b1 = 1.0;                  // progress coefficient
  double b2 = 0.01;                 // body-rate penalty coefficient
  double collision_penalty = -4.0;
  double gate_bonus = 10.0;
  double finish_bonus = 10.0;
  double gamma = 0.99;
};

struct StepEvents {
  bool collision = false;
  bool gate_passed = false;
  bool finished = false;
};

// the three-branch per-step reward; event flags are mutually exclusive on
// the collision/gate axis (the environment resolves precedence)
inline double compute_reward(const Vec3& p_prev, const Vec3& p_curr,
                             const Vec3& gate_center, const Vec3& omega,
                             const StepEvents& events,
                             const RewardConfig& cfg) {
  if (events.collision) return cfg.collision_penalty;
  if (events.gate_passed)
    return cfg.gate_bonus + (events.finished ? cfg.finish_bonus : 0.0);
  const double progress =
      (gate_center - p_prev).norm() - (gate_center - p_curr).norm();
  return cfg.b1 * progress - cfg.b2 * omega.norm();
}

// forward crossing of the gate plane with the hit inside the aperture.
// crossing parameter t in (0, 1] counts; a segment that starts on the plane
// (t = 0) does not, so a pass is credited at most once per approach
inline bool gate_pass_check(const Vec3& p_prev, const Vec3& p_curr,
                            const Gate& gate) {
  const Vec3 n = gate.orientation * Vec3::UnitX();
  const double s_prev = n.dot(p_prev - gate.center);
  const double s_curr = n.dot(p_curr - gate.center);
  if (!(s_prev < 0.0 && s_curr >= 0.0)) return false;
  const double t = s_prev / (s_prev - s_curr);
  const Vec3 hit = p_prev + t * (p_curr - p_prev);
  const Vec3 local = gate.orientation.conjugate() * (hit - gate.center);
  return std::abs(local.y()) <= gate.inner_half_extent &&
         std::abs(local.z()) <= gate.inner_half_extent;
}

namespace detail {

// distance from a point to an axis-aligned box centered at the origin
inline double box_distance(const Vec3& p, const Vec3& half) {
  const Vec3 d = (p.cwiseAbs() - half).cwiseMax(0.0);
  return d.norm();
}

}  // namespace detail

// true if a sphere of the given radius at p touches the gate frame (the
// square annulus, modeled as four bars with depth = frame_thickness)
inline bool gate_frame_hit(const Vec3& p, const Gate& gate, double radius) {
  const Vec3 local = gate.orientation.conjugate() * (p - gate.center);
  const double a = gate.inner_half_extent;
  const double w = gate.frame_thickness;
  const double hd = 0.5 * w;  // half depth along the traversal axis
  struct Bar {
    Vec3 center, half;
  };
  const Bar bars[4] = {
      {Vec3(0, 0, a + 0.5 * w), Vec3(hd, a + w, 0.5 * w)},
      {Vec3(0, 0, -(a + 0.5 * w)), Vec3(hd, a + w, 0.5 * w)},
      {Vec3(0, -(a + 0.5 * w), 0), Vec3(hd, 0.5 * w, a)},
      {Vec3(0, a + 0.5 * w, 0), Vec3(hd, 0.5 * w, a)},
  };
  for (const auto& bar : bars)
    if (detail::box_distance(local - bar.center, bar.half) <= radius)
      return true;
  return false;
}

// sphere proxy against every gate frame (decorative included) or the world
// bounds; leaving the bounds box, ground plane included, counts
inline bool collision_check(const Vec3& p, const Track& track, double radius) {
  if (!track.world_bounds.contains(p, radius)) return true;
  for (const auto& g : track.gates)
    if (gate_frame_hit(p, g, radius)) return true;
  return false;
}

enum class TerminationCause { running, collision, out_of_bounds, timeout, finished };

inline const char* to_string(TerminationCause c) {
  switch (c) {
    case TerminationCause::running: return "running";
    case TerminationCause::collision: return "collision";
    case TerminationCause::out_of_bounds: return "out_of_bounds";
    case TerminationCause::timeout: return "timeout";
    case TerminationCause::finished: return "finished";
  }
  return "?";
}

inline std::optional<TerminationCause> termination_cause_from_string(
    const std::string& s) {
  for (auto c : {TerminationCause::running, TerminationCause::collision,
                 TerminationCause::out_of_bounds, TerminationCause::timeout,
                 TerminationCause::finished})
    if (s == to_string(c)) return c;
  return std::nullopt;
}

struct EnvConfig {
  double dt = 0.02;                 // 50 Hz control
  int timeout_steps = 3000;         // 60 s at 50 Hz
  double drone_radius = 0.15;       // collision sphere proxy
  double reset_pos_jitter = 0.2;    // m, uniform per axis
  double reset_yaw_jitter_deg = 10.0;
  double action_lag_tau = 0.0;      // s; 0 disables the actuator lag
  QuadParams quad;
  RewardConfig reward;
};

struct EnvState {
  QuadState quad;
  int target_index = 0;  // position in the ordered non-decorative gate list
  int step_count = 0;
  int lap_count = 0;
  bool terminated = false;
  TerminationCause cause = TerminationCause::running;
  CtbrCommand applied;   // actuator state when the lag filter is active
};

struct StepInfo {
  StepEvents events;
  TerminationCause cause = TerminationCause::running;
  int gates_passed_total = 0;
  double speed = 0.0;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool terminated = false;
  StepInfo info;
};

class RaceEnv {
 public:
  RaceEnv(Track track, EnvConfig cfg, CameraModel cam)
      : track_(std::move(track)), cfg_(cfg), cam_(cam) {
    track_.validate();
    cfg_.quad.validate();
    cam_.validate();
    if (collision_check(track_.start.position, track_, cfg_.drone_radius))
      throw ValidationError("track '" + track_.name +
                            "': start pose is in collision");
  }

  const Track& track() const { return track_; }
  const EnvConfig& config() const { return cfg_; }
  const CameraModel& camera() const { return cam_; }
  const EnvState& state() const { return state_; }
  long action_clamp_count() const { return clamp_count_; }

  Observation reset(std::uint64_t seed) {
    Rng rng(seed);
    state_ = EnvState{};
    for (int attempt = 0; attempt < 100; ++attempt) {
      Vec3 jitter(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      const double dyaw =
          rng.uniform(-1, 1) * cfg_.reset_yaw_jitter_deg * M_PI / 180.0;
      QuadState q;
      q.p = track_.start.position + cfg_.reset_pos_jitter * jitter;
      q.q = yaw_quat(track_.start.yaw_rad + dyaw);
      if (!collision_check(q.p, track_, cfg_.drone_radius)) {
        state_.quad = q;
        break;
      }
      if (attempt == 99)
        throw ValidationError("reset: no collision-free start after 100 draws");
    }
    gates_passed_total_ = 0;
    return render(state_.quad, track_, cam_);
  }

  StepResult step(const RawAction& a) {
    if (state_.terminated)
      throw UsageError("step called on a terminated episode");

    const CtbrCommand setpoint = map_action(a, cfg_.quad, &clamp_count_);
    state_.applied = apply_command_lag(state_.applied, setpoint, cfg_.dt,
                                       cfg_.action_lag_tau);
    const Vec3 p_prev = state_.quad.p;
    const Gate& target = track_.target_gate(state_.target_index);
    const Vec3 goal = target.center;

    state_.quad = step_rk4(state_.quad, state_.applied, cfg_.dt, cfg_.quad);
    state_.step_count += 1;
    const Vec3 p_curr = state_.quad.p;

    // event precedence: gate pass first, then collision, bounds, timeout
    StepEvents events;
    TerminationCause cause = TerminationCause::running;
    if (gate_pass_check(p_prev, p_curr, target)) {
      events.gate_passed = true;
      gates_passed_total_ += 1;
      state_.target_index += 1;
      if (state_.target_index >= track_.num_targets()) {
        state_.lap_count += 1;
        if (state_.lap_count >= track_.laps) {
          events.finished = true;
          cause = TerminationCause::finished;
        } else {
          state_.target_index = 0;
        }
      }
    }
    if (cause == TerminationCause::running) {
      bool frame_hit = false;
      for (const auto& g : track_.gates)
        if (gate_frame_hit(p_curr, g, cfg_.drone_radius)) {
          frame_hit = true;
          break;
        }
      const bool oob = !track_.world_bounds.contains(p_curr, cfg_.drone_radius);
      if (frame_hit || oob) {
        cause = frame_hit ? TerminationCause::collision
                          : TerminationCause::out_of_bounds;
        // a pass already credited this step keeps its reward
        if (!events.gate_passed) events.collision = true;
      } else if (state_.step_count >= cfg_.timeout_steps) {
        cause = TerminationCause::timeout;
      }
    }

    StepResult out;
    out.reward = compute_reward(p_prev, p_curr, goal, state_.applied.omega,
                                events, cfg_.reward);
    if (cause != TerminationCause::running) {
      state_.terminated = true;
      state_.cause = cause;
    }
    out.terminated = state_.terminated;
    out.info.events = events;
    out.info.cause = cause;
    out.info.gates_passed_total = gates_passed_total_;
    out.info.speed = state_.quad.v.norm();
    out.obs = render(state_.quad, track_, cam_);
    return out;
  }

  // next target gate, if the race is still on
  const Gate* current_target() const {
    if (state_.terminated && state_.cause == TerminationCause::finished)
      return nullptr;
    return &track_.target_gate(state_.target_index);
  }

 private:
  Track track_;
  EnvConfig cfg_;
  CameraModel cam_;
  EnvState state_;
  long clamp_count_ = 0;
  int gates_passed_total_ = 0;
};

}  // namespace dreamrace
