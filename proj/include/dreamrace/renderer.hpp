#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dreamrace/camera.hpp"
#include "dreamrace/quad.hpp"
#include "dreamrace/track.hpp"

namespace dreamrace {

// RGB image, row-major, channels-last, values quantized to k/255 in [0,1]
struct Observation {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float* at(int row, int col) { return pixels.data() + 3 * (row * width + col); }
  const float* at(int row, int col) const {
    return pixels.data() + 3 * (row * width + col);
  }
  long size() const { return long(pixels.size()); }
};

namespace palette {
inline constexpr float kSkyZenith[3] = {0.25f, 0.45f, 0.95f};
inline constexpr float kSkyHorizon[3] = {0.65f, 0.80f, 0.95f};
inline constexpr float kGround[3] = {0.45f, 0.42f, 0.40f};
inline constexpr float kGridLine[3] = {0.90f, 0.80f, 0.10f};
inline constexpr float kGate[3] = {1.00f, 0.50f, 0.05f};
inline constexpr float kDecoy[3] = {0.85f, 0.08f, 0.08f};
}  // namespace palette

namespace detail {

struct CameraFrame {
  Vec3 origin;
  Eigen::Matrix3d cam_to_world;
  Eigen::Matrix3d world_to_cam;
  double tan_h, tan_v;
};

inline CameraFrame make_camera_frame(const QuadState& s, const CameraModel& cam) {
  CameraFrame f;
  f.origin = s.p;
  f.cam_to_world = (s.q * cam.mount_rotation.conjugate()).toRotationMatrix();
  f.world_to_cam = f.cam_to_world.transpose();
  f.tan_h = cam.tan_half_hfov();
  f.tan_v = cam.tan_half_vfov();
  return f;
}

// unit world-space ray through the center of pixel (row, col)
inline Vec3 pixel_ray(const CameraFrame& f, const CameraModel& cam, int row,
                      int col) {
  const double u = 2.0 * (col + 0.5) / cam.width - 1.0;
  const double v = 1.0 - 2.0 * (row + 0.5) / cam.height;
  const Vec3 d_cam(1.0, -u * f.tan_h, v * f.tan_v);
  return (f.cam_to_world * d_cam).normalized();
}

inline void shade_background(const CameraFrame& f, const Vec3& d, float* px) {
  if (d.z() < -1e-12 && f.origin.z() > 0.0) {
    const double t = -f.origin.z() / d.z();
    const Vec3 hit = f.origin + t * d;
    const double gx = hit.x() - std::floor(hit.x());
    const double gy = hit.y() - std::floor(hit.y());
    const bool line = gx < 0.08 || gy < 0.08;
    const float* c = line ? palette::kGridLine : palette::kGround;
    px[0] = c[0];
    px[1] = c[1];
    px[2] = c[2];
    return;
  }
  const double elev = std::asin(std::min(1.0, std::max(-1.0, d.z())));
  const float s = float(std::min(1.0, std::max(0.0, elev / (0.5 * M_PI))));
  for (int k = 0; k < 3; ++k)
    px[k] = palette::kSkyHorizon[k] +
            s * (palette::kSkyZenith[k] - palette::kSkyHorizon[k]);
}

// true if the local in-plane point lies on the frame annulus
inline bool on_frame(const Gate& g, double ly, double lz) {
  const double m = std::max(std::abs(ly), std::abs(lz));
  return m > g.inner_half_extent &&
         m <= g.inner_half_extent + g.frame_thickness;
}

// project a world point to pixel indices; returns false when clipped
inline bool project_point(const CameraFrame& f, const CameraModel& cam,
                          const Vec3& pt, int* row, int* col) {
  const Vec3 pc = f.world_to_cam * (pt - f.origin);
  if (pc.x() <= cam.near_clip) return false;
  const double u = -pc.y() / (pc.x() * f.tan_h);
  const double v = pc.z() / (pc.x() * f.tan_v);
  const double fx = (u + 1.0) * 0.5 * cam.width;
  const double fy = (1.0 - v) * 0.5 * cam.height;
  const int c = int(std::floor(fx));
  const int r = int(std::floor(fy));
  if (c < 0 || c >= cam.width || r < 0 || r >= cam.height) return false;
  *row = r;
  *col = c;
  return true;
}

}  // namespace detail

// deterministic flat-shaded rasterization in painter's order: background
// first (sky gradient and gridded ground via per-pixel rays), then gate
// frames far to near. Frames get an exact per-pixel plane test plus a point
// splat pass so that sub-pixel bars stay visible at distance.
inline Observation render(const QuadState& s, const Track& track,
                          const CameraModel& cam) {
  Observation obs;
  obs.height = cam.height;
  obs.width = cam.width;
  obs.pixels.assign(size_t(cam.height) * cam.width * 3, 0.0f);

  const detail::CameraFrame frame = detail::make_camera_frame(s, cam);

  std::vector<Vec3> rays(size_t(cam.height) * cam.width);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      Vec3 d = detail::pixel_ray(frame, cam, r, c);
      rays[size_t(r) * cam.width + c] = d;
      detail::shade_background(frame, d, obs.at(r, c));
    }

  // painter's order over gate primitives
  std::vector<int> order(track.gates.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double da = (track.gates[a].center - s.p).norm();
    const double db = (track.gates[b].center - s.p).norm();
    if (da != db) return da > db;
    return a < b;
  });

  const double pix_angle = 2.0 * frame.tan_h / cam.width;
  for (int gi : order) {
    const Gate& g = track.gates[gi];
    const float* color = g.decorative ? palette::kDecoy : palette::kGate;
    const Eigen::Matrix3d R = g.orientation.toRotationMatrix();
    const Vec3 n = R.col(0);

    // exact coverage: ray / gate-plane intersection per pixel
    for (int r = 0; r < cam.height; ++r)
      for (int c = 0; c < cam.width; ++c) {
        const Vec3& d = rays[size_t(r) * cam.width + c];
        const double denom = n.dot(d);
        if (std::abs(denom) < 1e-12) continue;
        const double t = n.dot(g.center - s.p) / denom;
        if (t <= cam.near_clip) continue;
        const Vec3 local = R.transpose() * (s.p + t * d - g.center);
        if (detail::on_frame(g, local.y(), local.z())) {
          float* px = obs.at(r, c);
          px[0] = color[0];
          px[1] = color[1];
          px[2] = color[2];
        }
      }

    // splat pass: guarantees at least one pixel for thin distant frames
    const double a = g.inner_half_extent, w = g.frame_thickness;
    const double extent = std::sqrt(2.0) * (a + w);
    const double dist = std::max(cam.near_clip,
                                 (g.center - s.p).norm() - extent);
    const double spacing =
        std::max(0.01, 0.35 * pix_angle * dist);
    struct Span {
      double y0, y1, z0, z1;
    };
    const Span bars[4] = {
        {-(a + w), a + w, a, a + w},      // top
        {-(a + w), a + w, -(a + w), -a},  // bottom
        {-(a + w), -a, -a, a},            // left
        {a, a + w, -a, a},                // right
    };
    for (const auto& bar : bars) {
      const int ny = std::min(
          200, std::max(2, int(std::ceil((bar.y1 - bar.y0) / spacing)) + 1));
      const int nz = std::min(
          200, std::max(2, int(std::ceil((bar.z1 - bar.z0) / spacing)) + 1));
      for (int iy = 0; iy < ny; ++iy)
        for (int iz = 0; iz < nz; ++iz) {
          const double ly = bar.y0 + (bar.y1 - bar.y0) * iy / (ny - 1);
          const double lz = bar.z0 + (bar.z1 - bar.z0) * iz / (nz - 1);
          const Vec3 pt = g.center + R * Vec3(0.0, ly, lz);
          int row, col;
          if (detail::project_point(frame, cam, pt, &row, &col)) {
            float* px = obs.at(row, col);
            px[0] = color[0];
            px[1] = color[1];
            px[2] = color[2];
          }
        }
    }
  }

  // quantize like an 8-bit sensor; keeps replay storage lossless
  for (auto& v : obs.pixels)
    v = float(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f)) / 255.0f;
  return obs;
}

}  // namespace dreamrace
