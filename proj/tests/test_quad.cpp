#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dreamrace/quad.hpp"
#include "dreamrace/rng.hpp"

using namespace dreamrace;

TEST_CASE("hover thrust cancels gravity") {
  QuadParams params;
  QuadState s;
  CtbrCommand u;
  u.thrust = kGravity;
  auto d = quad_derivative(s, u, params);
  CHECK(d.v_dot.norm() == Catch::Approx(0.0).margin(1e-15));
  CHECK(d.p_dot.norm() == 0.0);
}

TEST_CASE("free fall accelerates straight down") {
  QuadParams params;
  QuadState s;
  CtbrCommand u;  // zero thrust
  auto d = quad_derivative(s, u, params);
  CHECK(d.v_dot.x() == 0.0);
  CHECK(d.v_dot.y() == 0.0);
  CHECK(d.v_dot.z() == Catch::Approx(-kGravity));
}

TEST_CASE("rolled attitude redirects thrust laterally") {
  QuadParams params;
  QuadState s;
  s.q = axis_angle_quat(Vec3::UnitX(), M_PI / 2.0);
  CtbrCommand u;
  u.thrust = kGravity;
  auto d = quad_derivative(s, u, params);

  // oracle: rotate the body-frame thrust vector with the rotation matrix
  const Vec3 expect = s.q.toRotationMatrix() * Vec3(0, 0, kGravity) +
                      Vec3(0, 0, -kGravity);
  CHECK((d.v_dot - expect).norm() < 1e-12);
  // no vertical thrust contribution, full lateral 9.81
  CHECK(d.v_dot.z() == Catch::Approx(-kGravity).margin(1e-12));
  CHECK(d.v_dot.head<2>().norm() == Catch::Approx(kGravity).margin(1e-12));
}

TEST_CASE("hover command is a fixed point of the integrator") {
  QuadParams params;
  QuadState s;
  s.p = Vec3(1.0, -2.0, 3.0);
  CtbrCommand u;
  u.thrust = kGravity;
  QuadState cur = s;
  for (int i = 0; i < 1000; ++i) cur = step_rk4(cur, u, 0.02, params);
  CHECK((cur.p - s.p).norm() < 1e-9);
  CHECK(cur.v.norm() < 1e-9);
}

TEST_CASE("pure yaw matches the quaternion exponential") {
  QuadParams params;
  QuadState s;
  s.q = axis_angle_quat(Vec3(0.3, -0.2, 0.9), 0.7);
  CtbrCommand u;
  u.thrust = kGravity;
  u.omega = Vec3(0.0, 0.0, M_PI);
  const double total_time = 0.5;  // total rotation pi/2
  const int steps = 25;
  QuadState cur = s;
  for (int i = 0; i < steps; ++i)
    cur = step_rk4(cur, u, total_time / steps, params);
  // body-rate integration composes on the right
  const Quat expect = s.q * axis_angle_quat(Vec3::UnitZ(), M_PI / 2.0);
  const double dist = std::min((cur.q.coeffs() - expect.coeffs()).norm(),
                               (cur.q.coeffs() + expect.coeffs()).norm());
  CHECK(dist < 1e-6);
}

TEST_CASE("rk4 shows fourth-order convergence under a smooth command") {
  QuadParams params;
  CtbrCommand u;
  u.thrust = 12.0;
  u.omega = Vec3(1.2, -0.8, 0.6);
  const double total = 1.0;

  auto integrate = [&](double dt) {
    QuadState s;
    const int n = int(std::lround(total / dt));
    for (int i = 0; i < n; ++i) s = step_rk4(s, u, dt, params);
    return s;
  };

  const QuadState ref = integrate(0.02 / 16.0);
  const double e1 = (integrate(0.02).p - ref.p).norm();
  const double e2 = (integrate(0.01).p - ref.p).norm();
  const double order = std::log2(e1 / e2);
  INFO("e1=" << e1 << " e2=" << e2 << " order=" << order);
  CHECK(order > 3.5);
  CHECK(order < 4.6);
}

TEST_CASE("quaternion norm stays unit over many random commands") {
  QuadParams params;
  QuadState s;
  Rng rng(5);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    RawAction a;
    for (auto& v : a.a) v = rng.uniform(-1.0, 1.0);
    s = step_rk4(s, map_action(a, params), 0.02, params);
    worst = std::max(worst, std::abs(s.q.norm() - 1.0));
    s.p = Vec3::Zero();  // keep the trajectory bounded; attitude is the point
    s.v = Vec3::Zero();
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("ballistic flight keeps horizontal velocity and linear vz") {
  QuadParams params;
  QuadState s;
  s.v = Vec3(3.0, -1.0, 2.0);
  CtbrCommand u;  // zero thrust, zero rates
  QuadState cur = s;
  const double dt = 0.02;
  for (int i = 1; i <= 500; ++i) {
    cur = step_rk4(cur, u, dt, params);
    const double t = i * dt;
    REQUIRE(std::abs(cur.v.x() - s.v.x()) < 1e-12);
    REQUIRE(std::abs(cur.v.y() - s.v.y()) < 1e-12);
    REQUIRE(std::abs(cur.v.z() - (s.v.z() - kGravity * t)) < 1e-9);
  }
}

TEST_CASE("non-finite state raises a numeric error") {
  QuadParams params;
  QuadState s;
  s.v.x() = std::nan("");
  CtbrCommand u;
  REQUIRE_THROWS_AS(step_rk4(s, u, 0.02, params), NumericError);
  QuadState ok;
  REQUIRE_THROWS_AS(step_rk4(ok, u, 0.0, params), UsageError);
}

TEST_CASE("action map endpoints and midpoint") {
  QuadParams params;  // twr 2.7, omega_max 6
  {
    RawAction a{{-1.0, 0.0, 0.0, 0.0}};
    auto cmd = map_action(a, params);
    CHECK(cmd.thrust == 0.0);
    CHECK(cmd.omega.norm() == 0.0);
  }
  {
    RawAction a{{1.0, 0.0, 0.0, 0.0}};
    auto cmd = map_action(a, params);
    CHECK(cmd.thrust == Catch::Approx(2.7 * 9.81));  // 26.487
  }
  {
    RawAction a{{0.0, 1.0, 0.0, 0.0}};
    auto cmd = map_action(a, params);
    CHECK(cmd.thrust == Catch::Approx(13.2435));
    CHECK(cmd.omega.x() == Catch::Approx(6.0));
    CHECK(cmd.omega.y() == 0.0);
    CHECK(cmd.omega.z() == 0.0);
  }
}

TEST_CASE("out-of-range actions clamp and count") {
  QuadParams params;
  long clamps = 0;
  RawAction a{{1.5, -2.0, 0.5, 0.0}};
  auto cmd = map_action(a, params, &clamps);
  CHECK(clamps == 2);
  CHECK(cmd.thrust == Catch::Approx(params.f_t_max()));
  CHECK(cmd.omega.x() == Catch::Approx(-params.omega_max));
}

TEST_CASE("param validation enforces the rotor thrust budget") {
  QuadParams ok;
  REQUIRE_NOTHROW(ok.validate());  // 26.487 * 0.6 = 15.89 <= 16
  QuadParams bad = ok;
  bad.thrust_to_weight = 2.8;  // 27.468 * 0.6 = 16.48 > 16
  REQUIRE_THROWS_AS(bad.validate(), UsageError);
  QuadParams neg = ok;
  neg.mass = 0.0;
  REQUIRE_THROWS_AS(neg.validate(), UsageError);
}

TEST_CASE("command lag tracks the setpoint and can be disabled") {
  CtbrCommand prev;
  CtbrCommand target;
  target.thrust = 10.0;
  target.omega = Vec3(1, 2, 3);
  auto off = apply_command_lag(prev, target, 0.02, 0.0);
  CHECK(off.thrust == 10.0);
  auto lag = apply_command_lag(prev, target, 0.02, 0.1);
  CHECK(lag.thrust > 0.0);
  CHECK(lag.thrust < 10.0);
  CtbrCommand cur;
  for (int i = 0; i < 200; ++i) cur = apply_command_lag(cur, target, 0.02, 0.1);
  CHECK(cur.thrust == Catch::Approx(10.0).epsilon(1e-6));
}
