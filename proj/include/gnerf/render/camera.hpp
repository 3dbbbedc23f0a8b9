#pragma once

#include <gnerf/core/types.hpp>

#include <Eigen/Geometry>

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace gnerf::render {

/// Pinhole camera. The pose maps camera coordinates to world; the camera looks down
/// its local -z axis with +y up and +x right.
struct Camera {
  Mat4 pose = Mat4::Identity();
  double focal = 1.0;
  double cx = 0.5;
  double cy = 0.5;
  int width = 1;
  int height = 1;

  Vec3 origin() const { return pose.block<3, 1>(0, 3); }
  Eigen::Matrix3d rotation() const { return pose.block<3, 3>(0, 0); }

  void validate() const {
    require(focal > 0, "camera: focal must be > 0");
    require(width > 0 && height > 0, "camera: image size must be positive");
    require(pose.allFinite(), "camera: non-finite pose");
    const Eigen::Matrix3d r = rotation();
    require((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-6,
            "camera: rotation block is not orthonormal");
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3(0, 0, -1);
  double near = 0.0;
  double far = 1.0;
};

/// Ray through the centre of pixel (u, v); v grows downwards.
inline Ray generate_ray(const Camera& cam, int u, int v, double near, double far) {
  if (u < 0 || v < 0 || u >= cam.width || v >= cam.height)
    throw ContractError("generate_rays: pixel (" + std::to_string(u) + ", " + std::to_string(v) + ") out of bounds");
  require(near >= 0 && near < far, "generate_rays: need 0 <= near < far");
  const Vec3 local((u + 0.5 - cam.cx) / cam.focal, -(v + 0.5 - cam.cy) / cam.focal, -1.0);
  Ray r;
  r.origin = cam.origin();
  r.direction = (cam.rotation() * local).normalized();
  r.near = near;
  r.far = far;
  return r;
}

inline std::vector<Ray> generate_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixels, double near,
                                      double far) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (auto [u, v] : pixels) rays.push_back(generate_ray(cam, u, v, near, far));
  return rays;
}

/// Camera-to-world pose at `eye` looking at `target`.
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, 1, 0)) {
  const Vec3 back = (eye - target).normalized();
  Vec3 right = up.cross(back);
  if (right.norm() < 1e-9) right = Vec3(1, 0, 0).cross(back);
  right.normalize();
  const Vec3 true_up = back.cross(right);
  Mat4 m = Mat4::Identity();
  m.block<3, 1>(0, 0) = right;
  m.block<3, 1>(0, 1) = true_up;
  m.block<3, 1>(0, 2) = back;
  m.block<3, 1>(0, 3) = eye;
  return m;
}

/// 16 whitespace-separated numbers, row-major, one line.
inline std::string format_pose(const Mat4& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) os << (r || c ? " " : "") << m(r, c);
  os << "\n";
  return os.str();
}

inline Mat4 parse_pose(const std::string& text, const std::string& origin = "<pose>") {
  std::istringstream is(text);
  std::vector<double> v;
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw IoError("pose file " + origin + ": bad number '" + tok + "'");
    }
  }
  if (v.size() != 16) throw IoError("pose file " + origin + ": expected 16 numbers, found " + std::to_string(v.size()));
  Mat4 m;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) m(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
  return m;
}

inline Mat4 read_pose(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open pose file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_pose(ss.str(), path);
}

inline void write_pose(const std::string& path, const Mat4& m) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write pose file " + path);
  f << format_pose(m);
}

}  // namespace gnerf::render
