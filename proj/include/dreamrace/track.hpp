#pragma once

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dreamrace/errors.hpp"
#include "dreamrace/quad.hpp"

namespace dreamrace {

// a square gate; local +x is the traversal direction, the aperture lives in
// the local y-z plane
struct Gate {
  Vec3 center = Vec3::Zero();
  Quat orientation = Quat::Identity();
  double inner_half_extent = 0.7;  // m
  double frame_thickness = 0.2;    // m
  bool decorative = false;         // rendered but never a target

  double yaw_rad() const {
    const Vec3 fwd = orientation * Vec3::UnitX();
    return std::atan2(fwd.y(), fwd.x());
  }
};

struct StartPose {
  Vec3 position = Vec3::Zero();
  double yaw_rad = 0.0;
};

struct Box3 {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();
  bool contains(const Vec3& p, double margin = 0.0) const {
    return (p.array() >= lo.array() + margin).all() &&
           (p.array() <= hi.array() - margin).all();
  }
};

struct Track {
  std::string name;
  std::vector<Gate> gates;  // ordered; decorative gates are skipped as targets
  int laps = 1;
  Box3 world_bounds;
  StartPose start;

  // indices into gates[] of the traversal targets, in order
  std::vector<int> target_indices() const {
    std::vector<int> out;
    for (int i = 0; i < int(gates.size()); ++i)
      if (!gates[i].decorative) out.push_back(i);
    return out;
  }

  int num_targets() const { return int(target_indices().size()); }

  const Gate& target_gate(int target_index) const {
    return gates[target_indices().at(target_index)];
  }

  void validate() const {
    if (num_targets() < 1)
      throw ValidationError("track '" + name +
                            "': needs at least one non-decorative gate");
    if (laps < 1) throw ValidationError("track '" + name + "': laps must be >= 1");
    if ((world_bounds.hi.array() <= world_bounds.lo.array()).any())
      throw ValidationError("track '" + name + "': empty world bounds");
    if (!world_bounds.contains(start.position))
      throw ValidationError("track '" + name + "': start pose outside bounds");
    for (const auto& g : gates) {
      if (g.inner_half_extent <= 0.0)
        throw ValidationError("track '" + name + "': gate aperture must be > 0");
      if (g.frame_thickness <= 0.0)
        throw ValidationError("track '" + name + "': frame thickness must be > 0");
    }
  }
};

namespace detail {

inline Vec3 yaml_vec3(const YAML::Node& n) {
  if (!n.IsSequence() || n.size() != 3)
    throw ParseError("expected a 3-element sequence");
  return Vec3(n[0].as<double>(), n[1].as<double>(), n[2].as<double>());
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline Track parse_track(const YAML::Node& root) {
  Track t;
  t.name = root["name"].as<std::string>("unnamed");
  t.laps = root["laps"].as<int>(1);
  const auto& b = root["bounds"];
  if (!b) throw ParseError("track: missing 'bounds'");
  t.world_bounds.lo = detail::yaml_vec3(b["lo"]);
  t.world_bounds.hi = detail::yaml_vec3(b["hi"]);
  const auto& sp = root["start_pose"];
  if (!sp) throw ParseError("track: missing 'start_pose'");
  t.start.position = detail::yaml_vec3(sp["position"]);
  t.start.yaw_rad = sp["yaw_degrees"].as<double>(0.0) * M_PI / 180.0;
  for (const auto& gn : root["gates"]) {
    Gate g;
    g.center = detail::yaml_vec3(gn["center"]);
    g.orientation = yaw_quat(gn["yaw_degrees"].as<double>(0.0) * M_PI / 180.0);
    g.inner_half_extent = gn["inner_half_extent"].as<double>(0.7);
    g.frame_thickness = gn["frame_thickness"].as<double>(0.2);
    g.decorative = gn["decorative"].as<bool>(false);
    t.gates.push_back(g);
  }
  t.validate();
  return t;
}

// yaml-cpp reports line/column in its exception text
inline Track load_track(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ParseError("track file not found: " + path);
  } catch (const YAML::Exception& e) {
    throw ParseError("track " + path + ": " + e.what());
  }
  try {
    return parse_track(root);
  } catch (const YAML::Exception& e) {
    throw ParseError("track " + path + ": " + e.what());
  }
}

inline void save_track(const Track& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write track file: " + path);
  out << "# gate track definition\n";
  out << "name: " << t.name << "\n";
  out << "laps: " << t.laps << "\n";
  out << "bounds:\n";
  auto vec = [&](const Vec3& v) {
    return "[" + detail::fmt_double(v.x()) + ", " + detail::fmt_double(v.y()) +
           ", " + detail::fmt_double(v.z()) + "]";
  };
  out << "  lo: " << vec(t.world_bounds.lo) << "\n";
  out << "  hi: " << vec(t.world_bounds.hi) << "\n";
  out << "start_pose:\n";
  out << "  position: " << vec(t.start.position) << "\n";
  out << "  yaw_degrees: " << detail::fmt_double(t.start.yaw_rad * 180.0 / M_PI)
      << "\n";
  out << "gates:\n";
  for (const auto& g : t.gates) {
    out << "  - center: " << vec(g.center) << "\n";
    out << "    yaw_degrees: " << detail::fmt_double(g.yaw_rad() * 180.0 / M_PI)
        << "\n";
    out << "    inner_half_extent: " << detail::fmt_double(g.inner_half_extent)
        << "\n";
    out << "    frame_thickness: " << detail::fmt_double(g.frame_thickness)
        << "\n";
    out << "    decorative: " << (g.decorative ? "true" : "false") << "\n";
  }
}

// ---------------------------------------------------------------------------
// bundled presets; hand-authored approximations of the usual race layouts

namespace detail {

inline Gate make_gate(double x, double y, double z, double yaw_rad,
                      bool decorative = false) {
  Gate g;
  g.center = Vec3(x, y, z);
  g.orientation = yaw_quat(yaw_rad);
  g.decorative = decorative;
  return g;
}

}  // namespace detail

inline Track make_single_gate_track() {
  Track t;
  t.name = "single_gate";
  t.gates.push_back(detail::make_gate(4.5, 0.0, 1.5, 0.0));
  t.world_bounds = {Vec3(-2.0, -3.5, 0.0), Vec3(9.0, 3.5, 4.0)};
  t.start.position = Vec3(0.0, 0.0, 1.5);
  t.start.yaw_rad = 0.0;
  t.validate();
  return t;
}

inline Track make_circle_track() {
  Track t;
  t.name = "circle";
  const int n = 6;
  const double radius = 6.0, z = 1.5;
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * k / n;
    t.gates.push_back(detail::make_gate(radius * std::cos(a),
                                        radius * std::sin(a), z,
                                        a + M_PI / 2.0));
  }
  const double a0 = -M_PI / 4.0;  // on the circle, before gate 0
  t.start.position = Vec3(radius * std::cos(a0), radius * std::sin(a0), z);
  t.start.yaw_rad = a0 + M_PI / 2.0;
  t.world_bounds = {Vec3(-9.5, -9.5, 0.0), Vec3(9.5, 9.5, 5.0)};
  t.validate();
  return t;
}

// bean-shaped loop: offset-circle radius with one flattened side
inline Track make_kidney_track() {
  Track t;
  t.name = "kidney";
  const int n = 8;
  const double z = 1.5;
  auto rho = [](double a) { return 5.0 - 1.8 * std::cos(a); };
  auto drho = [](double a) { return 1.8 * std::sin(a); };
  for (int k = 0; k < n; ++k) {
    const double a = 2.0 * M_PI * k / n;
    const double r = rho(a);
    // tangent of (rho(a) cos a, rho(a) sin a)
    const double tx = drho(a) * std::cos(a) - r * std::sin(a);
    const double ty = drho(a) * std::sin(a) + r * std::cos(a);
    t.gates.push_back(
        detail::make_gate(r * std::cos(a), r * std::sin(a), z, std::atan2(ty, tx)));
  }
  const double a0 = -M_PI / 8.0;
  const double r0 = rho(a0);
  t.start.position = Vec3(r0 * std::cos(a0), r0 * std::sin(a0), z);
  const double tx = drho(a0) * std::cos(a0) - r0 * std::sin(a0);
  const double ty = drho(a0) * std::sin(a0) + r0 * std::cos(a0);
  t.start.yaw_rad = std::atan2(ty, tx);
  t.world_bounds = {Vec3(-8.0, -8.0, 0.0), Vec3(8.0, 8.0, 5.0)};
  t.validate();
  return t;
}

// lemniscate of Gerono: (a sin u, b sin u cos u)
inline Track make_figure8_track(bool with_decoys = false) {
  Track t;
  t.name = with_decoys ? "figure8_decoys" : "figure8";
  const int n = 8;
  const double a = 6.0, b = 6.0, z = 1.5;
  for (int k = 0; k < n; ++k) {
    const double u = M_PI / 8.0 + 2.0 * M_PI * k / n;
    const double x = a * std::sin(u);
    const double y = b * std::sin(u) * std::cos(u);
    const double tx = a * std::cos(u);
    const double ty = b * std::cos(2.0 * u);
    t.gates.push_back(detail::make_gate(x, y, z, std::atan2(ty, tx)));
  }
  if (with_decoys) {
    t.gates.push_back(detail::make_gate(0.0, 5.5, 1.5, 0.0, true));
    t.gates.push_back(detail::make_gate(0.0, -5.5, 1.5, 0.0, true));
  }
  const double u0 = M_PI / 16.0;
  t.start.position = Vec3(a * std::sin(u0), b * std::sin(u0) * std::cos(u0), z);
  t.start.yaw_rad = std::atan2(b * std::cos(2.0 * u0), a * std::cos(u0));
  t.world_bounds = {Vec3(-8.5, -7.0, 0.0), Vec3(8.5, 7.0, 5.0)};
  t.validate();
  return t;
}

// preset lookup by name; anything else should be treated as a file path
inline bool is_preset_track(const std::string& name) {
  return name == "single_gate" || name == "circle" || name == "kidney" ||
         name == "figure8" || name == "figure8_decoys";
}

inline Track make_preset_track(const std::string& name) {
  if (name == "single_gate") return make_single_gate_track();
  if (name == "circle") return make_circle_track();
  if (name == "kidney") return make_kidney_track();
  if (name == "figure8") return make_figure8_track(false);
  if (name == "figure8_decoys") return make_figure8_track(true);
  throw UsageError("unknown track preset: " + name);
}

inline Track resolve_track(const std::string& name_or_path) {
  if (is_preset_track(name_or_path)) return make_preset_track(name_or_path);
  return load_track(name_or_path);
}

}  // namespace dreamrace
