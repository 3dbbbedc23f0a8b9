#pragma once

#include <gnerf/data/png_io.hpp>
#include <gnerf/data/toy.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

namespace gnerf::data {

namespace fs = std::filesystem;

struct Intrinsics {
  double focal = 89.6;
  double cx = 32.0;
  double cy = 32.0;
  int width = 64;
  int height = 64;

  render::Camera camera(const Mat4& pose) const {
    render::Camera c;
    c.pose = pose;
    c.focal = focal;
    c.cx = cx;
    c.cy = cy;
    c.width = width;
    c.height = height;
    return c;
  }

  static Intrinsics for_resolution(int res) {
    Intrinsics k;
    k.width = k.height = res;
    k.focal = 1.4 * res;
    k.cx = k.cy = res / 2.0;
    return k;
  }
};

struct InstanceViews {
  std::string id;
  std::vector<Image> images;
  std::vector<Mat4> poses;

  std::size_t view_count() const { return images.size(); }
};

enum class Split { train, test };
inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct Dataset {
  Intrinsics intrinsics;
  std::vector<InstanceViews> train;
  std::vector<InstanceViews> test;

  const std::vector<InstanceViews>& split(Split s) const { return s == Split::train ? train : test; }
  std::vector<InstanceViews>& split(Split s) { return s == Split::train ? train : test; }
};

/// Camera rig around the origin.
struct RigConfig {
  double radius = 2.0;
  double min_elevation_deg = 5.0;
  double max_elevation_deg = 55.0;
  double spiral_turns = 2.0;
};

inline Vec3 spherical(double radius, double azimuth, double elevation) {
  return radius * Vec3(std::cos(elevation) * std::sin(azimuth), std::sin(elevation), std::cos(elevation) * std::cos(azimuth));
}

/// Random viewpoints on the upper band of the sphere, reproducible from `seed`.
inline std::vector<Mat4> random_rig(const RigConfig& rig, int views, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x726967ull}));
  constexpr double deg = std::numbers::pi / 180.0;
  std::vector<Mat4> poses;
  for (int i = 0; i < views; ++i) {
    const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double el = rng.uniform(rig.min_elevation_deg, rig.max_elevation_deg) * deg;
    poses.push_back(render::look_at(spherical(rig.radius, az, el), Vec3::Zero()));
  }
  return poses;
}

/// Archimedean spiral: azimuth and elevation both grow linearly with the view index.
inline std::vector<Mat4> spiral_rig(const RigConfig& rig, int views) {
  constexpr double deg = std::numbers::pi / 180.0;
  std::vector<Mat4> poses;
  for (int i = 0; i < views; ++i) {
    const double s = (i + 0.5) / views;
    const double el = (rig.min_elevation_deg + s * (rig.max_elevation_deg - rig.min_elevation_deg)) * deg;
    const double az = 2.0 * std::numbers::pi * rig.spiral_turns * s;
    poses.push_back(render::look_at(spherical(rig.radius, az, el), Vec3::Zero()));
  }
  return poses;
}

struct DatasetSpec {
  int train_instances = 8;
  int test_instances = 2;
  int views = 20;
  int resolution = 64;
  std::uint64_t seed = 0;
  CarFamily family;
  RigConfig rig;
  render::RenderConfig render{128, false, true, 512, 0.5, 3.5};
};

inline std::string instance_name(int id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", id);
  return buf;
}

/// Instance specs for both splits; ids run on from train into test.
inline std::vector<ToyInstanceSpec> dataset_instances(const DatasetSpec& ds) {
  std::vector<ToyInstanceSpec> specs;
  for (int i = 0; i < ds.train_instances + ds.test_instances; ++i)
    specs.push_back(generate_instance(ds.family, derive_seed(ds.seed, {0x696e7374ull, static_cast<std::uint64_t>(i)}), i));
  return specs;
}

inline void write_intrinsics(const fs::path& path, const Intrinsics& k) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f.precision(17);
  f << k.focal << " " << k.cx << " " << k.cy << " " << k.width << " " << k.height << "\n";
}

inline Intrinsics read_intrinsics(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  Intrinsics k;
  if (!(f >> k.focal >> k.cx >> k.cy >> k.width >> k.height)) throw IoError("malformed intrinsics file " + path.string());
  if (k.focal <= 0 || k.width <= 0 || k.height <= 0) throw IoError("invalid intrinsics in " + path.string());
  return k;
}

/// Renders every instance from the oracle: train instances from the random rig, test
/// instances from the spiral rig. Writes the layout below when `out` is non-empty:
///   <out>/intrinsics.txt
///   <out>/<split>/<instance>/rgb/<view>.png
///   <out>/<split>/<instance>/pose/<view>.txt
inline Dataset render_dataset(const DatasetSpec& ds, const fs::path& out = {}) {
  Dataset d;
  d.intrinsics = Intrinsics::for_resolution(ds.resolution);
  const auto specs = dataset_instances(ds);
  for (const auto& spec : specs) {
    const bool is_train = spec.id < ds.train_instances;
    InstanceViews iv;
    iv.id = instance_name(spec.id);
    iv.poses = is_train ? random_rig(ds.rig, ds.views, derive_seed(ds.seed, {static_cast<std::uint64_t>(spec.id)}))
                        : spiral_rig(ds.rig, ds.views);
    const auto field = oracle_evaluator(spec);
    for (const auto& pose : iv.poses)
      iv.images.push_back(quantize(render::render_image(field, d.intrinsics.camera(pose), ds.render)));
    (is_train ? d.train : d.test).push_back(std::move(iv));
  }
  if (!out.empty()) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
    write_intrinsics(out / "intrinsics.txt", d.intrinsics);
    for (Split s : {Split::train, Split::test}) {
      for (const auto& iv : d.split(s)) {
        const fs::path base = out / split_name(s) / iv.id;
        fs::create_directories(base / "rgb", ec);
        fs::create_directories(base / "pose", ec);
        if (ec) throw IoError("cannot create " + base.string() + ": " + ec.message());
        for (std::size_t v = 0; v < iv.images.size(); ++v) {
          write_png((base / "rgb" / (instance_name(static_cast<int>(v)) + ".png")).string(), iv.images[v]);
          render::write_pose((base / "pose" / (instance_name(static_cast<int>(v)) + ".txt")).string(), iv.poses[v]);
        }
      }
    }
  }
  return d;
}

/// Loads one instance directory (rgb/ and pose/ side by side).
inline InstanceViews load_instance(const fs::path& dir, const Intrinsics* expect = nullptr) {
  InstanceViews iv;
  iv.id = dir.filename().string();
  const fs::path rgb = dir / "rgb";
  const fs::path pose = dir / "pose";
  if (!fs::is_directory(rgb)) throw IoError("missing directory " + rgb.string());
  if (!fs::is_directory(pose)) throw IoError("missing directory " + pose.string());
  std::vector<fs::path> pngs;
  for (const auto& e : fs::directory_iterator(rgb))
    if (e.path().extension() == ".png") pngs.push_back(e.path());
  std::sort(pngs.begin(), pngs.end());
  if (pngs.empty()) throw IoError("no images in " + rgb.string());
  for (const auto& p : pngs) {
    const fs::path pf = pose / (p.stem().string() + ".txt");
    if (!fs::exists(pf)) throw IoError("missing pose file " + pf.string());
    Image img = read_png(p.string());
    if (expect && (img.width != expect->width || img.height != expect->height))
      throw IoError("image " + p.string() + " is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                    ", expected " + std::to_string(expect->width) + "x" + std::to_string(expect->height));
    if (!iv.images.empty() && !img.same_shape(iv.images.front()))
      throw IoError("image " + p.string() + " differs in resolution from the other views");
    iv.images.push_back(std::move(img));
    iv.poses.push_back(render::read_pose(pf.string()));
  }
  return iv;
}

inline Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " does not exist");
  Dataset d;
  d.intrinsics = read_intrinsics(root / "intrinsics.txt");
  for (Split s : {Split::train, Split::test}) {
    const fs::path dir = root / split_name(s);
    if (!fs::is_directory(dir)) continue;
    std::vector<fs::path> inst;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) inst.push_back(e.path());
    std::sort(inst.begin(), inst.end());
    for (const auto& p : inst) d.split(s).push_back(load_instance(p, &d.intrinsics));
  }
  if (d.train.empty() && d.test.empty()) throw IoError("dataset " + root.string() + " has no instances");
  return d;
}

}  // namespace gnerf::data
