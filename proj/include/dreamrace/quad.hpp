#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <stdexcept>

#include "dreamrace/errors.hpp"

namespace dreamrace {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

constexpr double kGravity = 9.81;

// platform state x = [p, q, v]: world position, unit quaternion body->world,
// world velocity
struct QuadState {
  Vec3 p = Vec3::Zero();
  Quat q = Quat::Identity();
  Vec3 v = Vec3::Zero();

  bool finite() const {
    return p.allFinite() && v.allFinite() && q.coeffs().allFinite();
  }
};

// u = [f_T, omega]: mass-normalized collective thrust plus body-rate setpoints
struct CtbrCommand {
  double thrust = 0.0;       // m/s^2, >= 0
  Vec3 omega = Vec3::Zero();  // rad/s, body frame
};

struct RawAction {
  std::array<double, 4> a{0.0, 0.0, 0.0, 0.0};  // [-1,1]^4: thrust + rates
};

struct QuadParams {
  double mass = 0.6;                              // kg
  Vec3 inertia = Vec3(0.002410, 0.001800, 0.003759);  // kg m^2, diagonal
  double kappa = 0.022;                           // rotor torque constant
  double arm_length = 0.14;                       // m
  double max_rotor_thrust = 4.0;                  // N
  Vec3 gravity = Vec3(0.0, 0.0, -kGravity);       // m/s^2
  double thrust_to_weight = 2.7;
  double omega_max = 6.0;                         // rad/s per axis

  double f_t_max() const { return thrust_to_weight * kGravity; }

  void validate() const {
    if (mass <= 0.0) throw UsageError("QuadParams: mass must be positive");
    if (f_t_max() * mass > 4.0 * max_rotor_thrust + 1e-9)
      throw UsageError(
          "QuadParams: commanded thrust ceiling exceeds rotor capability");
  }
};

struct QuadDerivative {
  Vec3 p_dot;
  Quat q_dot;  // stored as a coefficient quaternion, not unit
  Vec3 v_dot;
};

// nominal dynamics: p' = v, v' = g + R(q) [0 0 f_T]^T, q' = q/2 * [0 w]
inline QuadDerivative quad_derivative(const QuadState& s, const CtbrCommand& u,
                                      const QuadParams& params) {
  QuadDerivative d;
  d.p_dot = s.v;
  d.v_dot = params.gravity + s.q * Vec3(0.0, 0.0, u.thrust);
  const Quat omega_q(0.0, u.omega.x(), u.omega.y(), u.omega.z());
  const Quat qd = s.q * omega_q;
  d.q_dot = Quat(0.5 * qd.w(), 0.5 * qd.x(), 0.5 * qd.y(), 0.5 * qd.z());
  return d;
}

namespace detail {

inline QuadState quad_axpy(const QuadState& s, const QuadDerivative& d,
                           double h) {
  QuadState out;
  out.p = s.p + h * d.p_dot;
  out.v = s.v + h * d.v_dot;
  out.q = Quat(s.q.w() + h * d.q_dot.w(), s.q.x() + h * d.q_dot.x(),
               s.q.y() + h * d.q_dot.y(), s.q.z() + h * d.q_dot.z());
  return out;
}

}  // namespace detail

// classical RK4 with quaternion renormalization after the step
inline QuadState step_rk4(const QuadState& s, const CtbrCommand& u, double dt,
                          const QuadParams& params) {
  if (dt <= 0.0) throw UsageError("step_rk4: dt must be positive");
  if (!s.finite()) throw NumericError("step_rk4: non-finite state");
  const QuadDerivative k1 = quad_derivative(s, u, params);
  const QuadDerivative k2 =
      quad_derivative(detail::quad_axpy(s, k1, 0.5 * dt), u, params);
  const QuadDerivative k3 =
      quad_derivative(detail::quad_axpy(s, k2, 0.5 * dt), u, params);
  const QuadDerivative k4 =
      quad_derivative(detail::quad_axpy(s, k3, dt), u, params);

  QuadState out;
  out.p = s.p + dt / 6.0 * (k1.p_dot + 2.0 * k2.p_dot + 2.0 * k3.p_dot + k4.p_dot);
  out.v = s.v + dt / 6.0 * (k1.v_dot + 2.0 * k2.v_dot + 2.0 * k3.v_dot + k4.v_dot);
  out.q = Quat(
      s.q.w() + dt / 6.0 * (k1.q_dot.w() + 2.0 * k2.q_dot.w() + 2.0 * k3.q_dot.w() + k4.q_dot.w()),
      s.q.x() + dt / 6.0 * (k1.q_dot.x() + 2.0 * k2.q_dot.x() + 2.0 * k3.q_dot.x() + k4.q_dot.x()),
      s.q.y() + dt / 6.0 * (k1.q_dot.y() + 2.0 * k2.q_dot.y() + 2.0 * k3.q_dot.y() + k4.q_dot.y()),
      s.q.z() + dt / 6.0 * (k1.q_dot.z() + 2.0 * k2.q_dot.z() + 2.0 * k3.q_dot.z() + k4.q_dot.z()));
  out.q.normalize();
  if (!out.finite()) throw NumericError("step_rk4: non-finite result");
  return out;
}

// affine map from normalized actions to command limits; thrust channel
// [-1,1] -> [0, f_T_max], rate channels [-1,1] -> [-w_max, w_max].
// Out-of-range inputs are clamped and counted for diagnostics.
inline CtbrCommand map_action(const RawAction& a, const QuadParams& params,
                              long* clamp_count = nullptr) {
  auto clamp1 = [&](double v) {
    if (v < -1.0 || v > 1.0) {
      if (clamp_count) ++(*clamp_count);
      return v < -1.0 ? -1.0 : 1.0;
    }
    return v;
  };
  CtbrCommand cmd;
  cmd.thrust = 0.5 * (clamp1(a.a[0]) + 1.0) * params.f_t_max();
  for (int i = 0; i < 3; ++i)
    cmd.omega[i] = clamp1(a.a[i + 1]) * params.omega_max;
  return cmd;
}

// first-order actuator lag: cmd tracks the setpoint with time constant tau;
// tau <= 0 passes the setpoint through
inline CtbrCommand apply_command_lag(const CtbrCommand& prev,
                                     const CtbrCommand& setpoint, double dt,
                                     double tau) {
  if (tau <= 0.0) return setpoint;
  const double alpha = 1.0 - std::exp(-dt / tau);
  CtbrCommand out;
  out.thrust = prev.thrust + alpha * (setpoint.thrust - prev.thrust);
  out.omega = prev.omega + alpha * (setpoint.omega - prev.omega);
  return out;
}

// quaternion for a rotation about a fixed axis (axis-angle closed form)
inline Quat axis_angle_quat(const Vec3& axis, double angle) {
  return Quat(Eigen::AngleAxisd(angle, axis.normalized()));
}

inline Quat yaw_quat(double yaw_rad) {
  return axis_angle_quat(Vec3::UnitZ(), yaw_rad);
}

}  // namespace dreamrace
