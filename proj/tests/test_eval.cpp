#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace gnerf;
using namespace gnerf::eval;
using gnerf::testing::constant_experts;
using gnerf::testing::random_model;
using gnerf::testing::tiny_config;

namespace {

Image formula_image(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = static_cast<float>(0.5 + 0.4 * std::sin(0.3 * x + 0.2 * y));
      img.at(x, y, 1) = static_cast<float>(0.5 + 0.4 * std::cos(0.25 * x - 0.15 * y));
      img.at(x, y, 2) = static_cast<float>(((x * 7 + y * 3) % 11) / 10.0);
    }
  return img;
}

Image perturbed(const Image& a) {
  Image b = a;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = static_cast<double>(a.at(x, y, c)) + 0.1 * std::sin(0.7 * x) * std::cos(0.5 * y);
        b.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return b;
}

// SSIM straight from the definition: weighted moments over every full window.
double brute_force_ssim(const Image& a, const Image& b) {
  const auto x = grayscale(a), y = grayscale(b);
  const auto k = gaussian_kernel(11, 1.5);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int count = 0;
  for (int i = 0; i + 11 <= x.rows(); ++i)
    for (int j = 0; j + 11 <= x.cols(); ++j) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int u = 0; u < 11; ++u)
        for (int v = 0; v < 11; ++v) {
          const double w = k[static_cast<std::size_t>(u)] * k[static_cast<std::size_t>(v)];
          const double p = x(i + u, j + v), q = y(i + u, j + v);
          mx += w * p;
          my += w * q;
          xx += w * p * p;
          yy += w * q * q;
          xy += w * p * q;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

template <class S>
void swap_experts(field::MoEParams<S>& m, std::size_t i, std::size_t j) {
  std::swap(m.experts[i], m.experts[j]);
  std::swap(m.mapper_weight[i], m.mapper_weight[j]);
  std::swap(m.mapper_bias[i], m.mapper_bias[j]);
}

}  // namespace

TEST(Psnr, Examples) {
  const Image a(8, 8, 0.5f);
  EXPECT_EQ(psnr(a, a), 99.0);
  EXPECT_NEAR(psnr(a, Image(8, 8, 0.6f)), 20.0, 1e-5);
  EXPECT_NEAR(psnr(Image(8, 8, 0.0f), a), 6.020599913279624, 1e-9);
}

TEST(Psnr, SymmetricAndShapeChecked) {
  const Image a = formula_image(9, 7);
  const Image b = perturbed(a);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_THROW(psnr(a, Image(7, 9)), ContractError);
  EXPECT_THROW(psnr(Image(), Image()), ContractError);
}

TEST(Psnr, ConstantOffsetLowersTheScore) {
  Image a = formula_image(9, 7);
  for (auto& v : a.rgb) v *= 0.5f;  // headroom so offsets never clip
  double prev = psnr(a, a);
  for (float off : {0.01f, 0.02f, 0.05f}) {
    Image b = a;
    for (auto& v : b.rgb) v += off;
    EXPECT_LT(psnr(a, b), prev);
    prev = psnr(a, b);
  }
}

TEST(Ssim, IdenticalImagesScoreOne) {
  const Image a = formula_image(24, 20);
  EXPECT_EQ(ssim(a, a), 1.0);
}

TEST(Ssim, ConstantImagesClosedForm) {
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(Image(16, 16, 0.2f), Image(16, 16, 0.6f)), (2 * 0.2 * 0.6 + c1) / (0.04 + 0.36 + c1), 1e-6);
}

TEST(Ssim, MatchesReferenceImplementation) {
  const Image a = formula_image(24, 20);
  const Image b = perturbed(a);
  // skimage.metrics.structural_similarity on the grayscale images with gaussian_weights=True,
  // sigma=1.5, use_sample_covariance=False, data_range=1
  EXPECT_NEAR(ssim(a, b), 0.9336562711359481, 1e-9);
  EXPECT_NEAR(ssim(a, b), brute_force_ssim(a, b), 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  EXPECT_THROW(ssim(Image(10, 30), Image(10, 30)), ContractError);
}

TEST(Utilization, DominantExpertGivesZeroEntropy) {
  const auto m = constant_experts<double>({1.0, 100.0}, field::Routing::hindsight);
  const auto code = gnerf::testing::zero_code<double>(m.config);
  const auto h = expert_utilization(m, code, random_points(2000, 1), 1.0, field::SelectionMode::deterministic);
  EXPECT_EQ(h.counts, (std::vector<long>{0, 2000}));
  EXPECT_EQ(h.entropy, 0.0);
}

TEST(Utilization, IdenticalExpertsGiveUniformUse) {
  const auto m = constant_experts<double>({2.0, 2.0, 2.0}, field::Routing::hindsight);
  const auto code = gnerf::testing::zero_code<double>(m.config);
  const auto h = expert_utilization(m, code, random_points(30000, 2), 1.0, field::SelectionMode::stochastic, 3);
  EXPECT_NEAR(h.entropy, std::log(3.0), 0.01);
  double total = 0;
  for (double f : h.frequency) total += f;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Utilization, RelabelingExpertsPermutesTheHistogram) {
  const auto c = tiny_config(3);
  auto m = random_model<double>(c, 4);
  const auto code = gnerf::testing::random_code<double>(c, 5);
  const auto pts = random_points(3000, 6);
  const auto h = expert_utilization(m, code, pts, 1.0, field::SelectionMode::deterministic);
  swap_experts(m, 0, 2);
  const auto g = expert_utilization(m, code, pts, 1.0, field::SelectionMode::deterministic);
  EXPECT_EQ(g.counts, (std::vector<long>{h.counts[2], h.counts[1], h.counts[0]}));
  EXPECT_NEAR(g.entropy, h.entropy, 1e-12);
}

TEST(Utilization, RivalStageIsNearUniform) {
  field::ModelConfig mc;
  mc.experts = 4;
  for (std::uint64_t seed : {1, 2}) {
    const auto model = field::MoEParams<float>::init(mc, seed);
    const field::InstanceCode<float> code{Vec<float>::Zero(mc.shape_code), Vec<float>::Zero(mc.texture_code), 0};
    const Mat<float> pts = random_points(20000, seed).cast<float>();
    const auto h = expert_utilization(model, code, pts, 10.0, field::SelectionMode::stochastic, seed);
    EXPECT_GE(h.entropy, 0.9 * std::log(4.0)) << "seed " << seed;
  }
}

TEST(Utilization, EmptyPointSetThrows) {
  const auto m = constant_experts<double>({1.0, 2.0}, field::Routing::hindsight);
  EXPECT_THROW(expert_utilization(m, gnerf::testing::zero_code<double>(m.config), Mat<double>(3, 0), 1.0,
                                  field::SelectionMode::deterministic),
               ContractError);
}

TEST(ContinuityProbe, ConstantHindsightFieldHasNoJumps) {
  const auto m = constant_experts<double>({1.0, 2.0}, field::Routing::hindsight);
  const auto rep = probe_continuity(field::make_evaluator(m, gnerf::testing::zero_code<double>(m.config)),
                                    {Vec3(-0.4, 0.1, 0), Vec3(0.4, 0.1, 0)}, {0.1, 0.05, 0.025});
  for (double j : rep.max_jump) EXPECT_LE(j, 1e-6);
  EXPECT_EQ(rep.verdict, "continuous-consistent");
}

TEST(ContinuityProbe, HardGateJumpPersists) {
  const auto m = constant_experts<double>({1.0, 2.0}, field::Routing::foresight);
  const auto rep = probe_continuity(field::make_evaluator(m, gnerf::testing::zero_code<double>(m.config)),
                                    {Vec3(-0.4, 0.1, 0), Vec3(0.4, 0.1, 0)}, {0.1, 0.05, 0.025, 0.0125});
  for (double j : rep.max_jump) EXPECT_NEAR(j, 1.0, 1e-9);
  EXPECT_EQ(rep.verdict, "jump-detected");
  // within each expert the field is flat; the jump sits at the hand-over
  for (const auto& per : rep.expert_max_jump)
    for (double j : per) EXPECT_LE(j, 1e-9);
}

TEST(ContinuityProbe, SmoothFieldShrinksWithStep) {
  const auto c = tiny_config(3);
  for (std::uint64_t seed : {7, 8, 9}) {
    const auto m = random_model<double>(c, seed);
    const auto code = gnerf::testing::random_code<double>(c, seed + 1);
    const std::vector<double> steps{0.04, 0.02, 0.01, 0.005, 0.0025};
    const auto rep = probe_continuity(field::make_evaluator(m, code), {Vec3(-0.45, -0.3, 0.2), Vec3(0.45, 0.35, -0.25)}, steps);
    EXPECT_EQ(rep.verdict, "continuous-consistent") << "seed " << seed;
    // Lipschitz: jump / step stays bounded as the step shrinks
    const double slope0 = rep.max_jump.front() / steps.front();
    for (std::size_t i = 0; i < steps.size(); ++i) EXPECT_LE(rep.max_jump[i] / steps[i], 2.0 * slope0 + 1e-9);
  }
}

TEST(ContinuityProbe, RejectsBadArguments) {
  const auto m = constant_experts<double>({1.0, 2.0}, field::Routing::hindsight);
  const auto f = field::make_evaluator(m, gnerf::testing::zero_code<double>(m.config));
  const Segment seg{Vec3(-0.4, 0, 0), Vec3(0.4, 0, 0)};
  EXPECT_THROW(probe_continuity(f, seg, {0.1}), ContractError);
  EXPECT_THROW(probe_continuity(f, seg, {0.05, 0.1}), ContractError);
  EXPECT_THROW(probe_continuity(f, {Vec3(-0.4, 0, 0), Vec3(0.9, 0, 0)}, {0.1, 0.05}), ContractError);
  EXPECT_THROW(probe_continuity(f, {Vec3::Zero(), Vec3::Zero()}, {0.1, 0.05}), ContractError);
}

TEST(ContinuityProbe, ReportSerializes) {
  const auto m = constant_experts<double>({1.0, 2.0}, field::Routing::foresight);
  const auto rep = probe_continuity(field::make_evaluator(m, gnerf::testing::zero_code<double>(m.config)),
                                    {Vec3(-0.4, 0.1, 0), Vec3(0.4, 0.1, 0)}, {0.1, 0.05});
  const auto j = rep.to_json();
  EXPECT_EQ(j["verdict"], "jump-detected");
  EXPECT_EQ(j["max_jump"].size(), 2u);
  EXPECT_EQ(j["segment"]["end"][0], 0.4);
}

namespace {

render::Camera small_camera() {
  data::Intrinsics k = data::Intrinsics::for_resolution(10);
  return k.camera(render::look_at(Vec3(0.3, 0.5, 1.9), Vec3::Zero()));
}

render::RenderConfig decomposition_config() {
  render::RenderConfig rc;
  rc.samples = 24;
  rc.near = 1.0;
  rc.far = 3.0;
  return rc;
}

}  // namespace

TEST(Decomposition, SingleExpertMatchesFullRender) {
  const auto c = tiny_config(1);
  const auto m = random_model<double>(c, 12);
  const auto d = render_decomposition(m, gnerf::testing::random_code<double>(c, 1), small_camera(), decomposition_config());
  ASSERT_EQ(d.expert_images.size(), 1u);
  EXPECT_EQ(d.expert_images[0], d.full);
}

TEST(Decomposition, OpacityPartitionsAcrossExperts) {
  const auto c = tiny_config(3);
  const auto m = random_model<double>(c, 13);
  const auto d = render_decomposition(m, gnerf::testing::random_code<double>(c, 2), small_camera(), decomposition_config());
  for (std::size_t r = 0; r < d.opacity.size(); ++r) {
    double sum = 0;
    for (const auto& e : d.expert_opacity) sum += e[r];
    EXPECT_NEAR(sum, d.opacity[r], 1e-6);
  }
  double share = 0;
  for (int n = 0; n < 3; ++n) share += d.foreground_fraction(n);
  if (d.foreground_total > 0) EXPECT_NEAR(share, 1.0, 1e-12);
}

TEST(Decomposition, FullImageMatchesRenderer) {
  const auto c = tiny_config(2);
  const auto m = random_model<double>(c, 14);
  const auto code = gnerf::testing::random_code<double>(c, 3);
  const auto rc = decomposition_config();
  const auto d = render_decomposition(m, code, small_camera(), rc);
  const Image ref = render::render_image(field::make_evaluator(m, code), small_camera(), rc);
  for (std::size_t i = 0; i < ref.rgb.size(); ++i) EXPECT_NEAR(d.full.rgb[i], ref.rgb[i], 1e-6);
}

TEST(Decomposition, ConstantExpertsSplitAtTheGate) {
  const auto m = constant_experts<double>({30.0, 30.0}, field::Routing::foresight);
  auto rc = decomposition_config();
  rc.samples = 64;
  rc.near = 1.55;  // first sample already inside the scene cube
  rc.far = 2.45;
  const auto d = render_decomposition(m, gnerf::testing::zero_code<double>(m.config),
                                      data::Intrinsics::for_resolution(16).camera(render::look_at(Vec3(0, 0, 2), Vec3::Zero())), rc);
  // the camera looks down -z; the left half of the image (x < 0) belongs to expert 0
  EXPECT_GT(d.foreground_fraction(0), 0.3);
  EXPECT_GT(d.foreground_fraction(1), 0.3);
}

namespace {

// Two instances whose images are renders of the model itself.
struct SelfConsistent {
  train::Checkpoint ck;
  std::vector<data::InstanceViews> instances;
  data::Intrinsics k = data::Intrinsics::for_resolution(12);
};

SelfConsistent self_consistent(int views) {
  SelfConsistent s;
  train::TrainConfig tc;
  tc.samples = 16;
  tc.near = 1.1;
  tc.far = 2.9;
  tc.seed = 5;
  s.ck = train::Checkpoint::initial(tiny_config(2), tc, {"a", "b"});
  s.ck.model = random_model<float>(s.ck.model.config, 6);
  const auto rc = tc.render_config(false);
  const auto poses = data::spiral_rig(data::RigConfig{}, views);
  for (int m = 0; m < 2; ++m) {
    data::InstanceViews iv;
    iv.id = m == 0 ? "a" : "b";
    const auto f = field::make_evaluator(s.ck.model, s.ck.code(m));
    for (const auto& p : poses) {
      iv.poses.push_back(p);
      iv.images.push_back(render::render_image(f, s.k.camera(p), rc));
    }
    s.instances.push_back(std::move(iv));
  }
  return s;
}

}  // namespace

TEST(Evaluate, SelfComparisonHitsTheCap) {
  const auto s = self_consistent(3);
  const auto rep = evaluate_training(s.ck, s.instances, s.k);
  ASSERT_EQ(rep.instances.size(), 2u);
  EXPECT_EQ(rep.mean_psnr, 99.0);
  EXPECT_NEAR(rep.mean_ssim, 1.0, 1e-12);
  EXPECT_EQ(rep.instances[0].view_count(), 3u);
}

TEST(Evaluate, HeldOutScoresAllButTheInputViews) {
  const auto s = self_consistent(20);
  Protocol p;
  p.input_views = {0};
  p.latent.iterations = 3;
  p.latent.batch_rays = 32;
  const auto rep = evaluate_heldout(s.ck, s.instances, s.k, p);
  for (const auto& r : rep.instances) {
    ASSERT_EQ(r.view_count(), 19u);
    for (const auto& v : r.views) EXPECT_NE(v.view, 0u);
  }
  EXPECT_GT(rep.mean_psnr, 0.0);
  EXPECT_EQ(rep.config_hash.size(), 16u);

  std::ostringstream csv;
  rep.write_csv(csv);
  std::istringstream is(csv.str());
  std::string line;
  int rows = 0;
  std::getline(is, line);
  EXPECT_EQ(line, "instance,view,psnr,ssim,config_hash");
  std::string last;
  while (std::getline(is, line)) {
    ++rows;
    last = line;
  }
  EXPECT_EQ(rows, 2 * 19 + 2 + 1);
  EXPECT_EQ(last.rfind("all,mean,", 0), 0u);
}

TEST(Evaluate, HeldOutIsDeterministic) {
  const auto s = self_consistent(4);
  Protocol p;
  p.latent.iterations = 4;
  p.latent.batch_rays = 32;
  std::ostringstream a, b;
  evaluate_heldout(s.ck, s.instances, s.k, p).write_csv(a);
  evaluate_heldout(s.ck, s.instances, s.k, p).write_csv(b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Evaluate, RejectsInstancesWithoutScorableViews) {
  const auto s = self_consistent(1);
  EXPECT_THROW(evaluate_heldout(s.ck, s.instances, s.k, Protocol{}), ContractError);
}
