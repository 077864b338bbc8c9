#pragma once

#include <cmath>

#include "dreamrace/errors.hpp"
#include "dreamrace/quad.hpp"
#include "dreamrace/track.hpp"

namespace dreamrace {

// onboard pinhole camera; the camera frame follows the body convention
// (x forward, y left, z up), mount_rotation maps body -> camera
struct CameraModel {
  int width = 16;
  int height = 16;
  double hfov_deg = 120.0;
  Quat mount_rotation = Quat::Identity();
  double near_clip = 0.05;

  void validate() const {
    if (width < 8 || height < 8)
      throw ValidationError("camera: resolution must be at least 8x8");
    if (hfov_deg < 30.0 || hfov_deg > 170.0)
      throw ValidationError("camera: fov must be within [30, 170] degrees");
    if (near_clip <= 0.0) throw ValidationError("camera: near_clip must be > 0");
  }

  double tan_half_hfov() const { return std::tan(0.5 * hfov_deg * M_PI / 180.0); }
  double tan_half_vfov() const {
    return tan_half_hfov() * double(height) / double(width);
  }
};

// camera pitched up by the given angle, forward-facing otherwise
inline Quat mount_pitch_up_deg(double deg) {
  // body->camera: inverse of tilting the camera axis up about body -y
  return Quat(Eigen::AngleAxisd(deg * M_PI / 180.0, Vec3::UnitY()));
}

// world-frame optical axis: camera forward through mount, then attitude
inline Vec3 camera_axis_world(const QuadState& s, const CameraModel& cam) {
  return (s.q * cam.mount_rotation.conjugate()) * Vec3::UnitX();
}

// angle between the optical axis and the direction to the gate center
inline double gaze_angle(const QuadState& s, const Gate& gate,
                         const CameraModel& cam) {
  const Vec3 to_gate = gate.center - s.p;
  const double dist = to_gate.norm();
  if (dist < 1e-9)
    throw UsageError("gaze_angle: drone coincides with the gate center");
  const double c = camera_axis_world(s, cam).dot(to_gate / dist);
  return std::acos(std::min(1.0, std::max(-1.0, c)));
}

}  // namespace dreamrace
