#include "fixtures.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gnerf;
using namespace gnerf::field;
using gnerf::testing::constant_experts;
using gnerf::testing::random_code;
using gnerf::testing::random_model;
using gnerf::testing::tiny_config;

using V3 = Eigen::Vector3d;

namespace {

FieldBatch<double> random_batch(const ModelConfig& c, Eigen::Index P, int codes, std::uint64_t seed) {
  Rng rng(seed);
  FieldBatch<double> b;
  b.positions.resize(3, P);
  for (Eigen::Index i = 0; i < b.positions.size(); ++i) b.positions.data()[i] = rng.uniform(-0.5, 0.5);
  b.directions = gnerf::testing::random_unit_columns(P, seed + 1);
  for (Eigen::Index p = 0; p < P; ++p) b.code_index.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(codes))));
  b.shape_codes.resize(c.shape_code, codes);
  b.texture_codes.resize(c.texture_code, codes);
  for (Eigen::Index i = 0; i < b.shape_codes.size(); ++i) b.shape_codes.data()[i] = rng.uniform(-0.5, 0.5);
  for (Eigen::Index i = 0; i < b.texture_codes.size(); ++i) b.texture_codes.data()[i] = rng.uniform(-0.5, 0.5);
  return b;
}

Mat<double> gumbel_matrix(int rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Mat<double> g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = gumbel_from_uniform(rng.uniform());
  return g;
}

struct Probe {
  Vec<double> wsigma;
  Mat<double> wrgb;
  double operator()(const FieldResult<double>& r) const { return r.sigma.dot(wsigma) + r.rgb.cwiseProduct(wrgb).sum(); }
};

}  // namespace

TEST(MapShapeCode, ZeroWeightsGiveBiases) {
  auto c = tiny_config(3);
  auto m = MoEParams<double>::zeros(c);
  for (int n = 0; n < 3; ++n) m.mapper_bias[static_cast<std::size_t>(n)].setConstant(n + 0.5);
  const auto out = map_shape_code<double>(Vec<double>::Random(c.shape_code), m);
  ASSERT_EQ(out.size(), 3u);
  for (int n = 0; n < 3; ++n) EXPECT_EQ(out[static_cast<std::size_t>(n)], m.mapper_bias[static_cast<std::size_t>(n)]);
}

TEST(MapShapeCode, IdentityMap) {
  auto c = tiny_config(2);
  c.expert_code = c.shape_code;
  auto m = MoEParams<double>::zeros(c);
  for (auto& w : m.mapper_weight) w.setIdentity();
  const Vec<double> z = Vec<double>::Random(c.shape_code);
  for (const auto& o : map_shape_code<double>(z, m)) EXPECT_EQ(o, z);
}

TEST(MapShapeCode, MatchesMatVecOracle) {
  const auto c = tiny_config(2);
  const auto m = random_model<double>(c, 3);
  Vec<double> z(4);
  z << 0.3, -0.2, 0.9, -0.7;
  const auto out = map_shape_code<double>(z, m);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < c.expert_code; ++i) {
      double s = m.mapper_bias[static_cast<std::size_t>(n)](i);
      for (int j = 0; j < 4; ++j) s += m.mapper_weight[static_cast<std::size_t>(n)](i, j) * z(j);
      EXPECT_NEAR(out[static_cast<std::size_t>(n)](i), s, 1e-12);
    }
}

TEST(MapShapeCode, DimensionMismatchThrows) {
  const auto m = random_model<double>(tiny_config(2), 3);
  EXPECT_THROW(map_shape_code<double>(Vec<double>::Zero(5), m), ContractError);
}

TEST(MapTextureCode, IsIdentity) {
  const Vec<double> z = Vec<double>::Random(7);
  EXPECT_EQ(map_texture_code(z), z);
  EXPECT_EQ(map_texture_code(map_texture_code(z)), z);
  EXPECT_TRUE(map_texture_code(Vec<double>(Vec<double>::Zero(3))).isZero(0));
}

TEST(ExpertForward, ZeroNetworkDensity) {
  const auto c = tiny_config(1);
  const auto m = MoEParams<double>::zeros(c);
  const auto [h, sigma] = expert_forward<double>(V3(0.1, 0.2, 0.3), Vec<double>::Zero(c.expert_code), m.experts[0], c);
  EXPECT_NEAR(sigma, std::log(2.0) + 1e-6, 1e-15);
  EXPECT_EQ(h.size(), c.feature_width);
}

TEST(ExpertForward, MatchesComposedPrimitives) {
  const auto c = tiny_config(1);
  const auto m = random_model<double>(c, 9);
  const V3 x(0.2, -0.1, 0.35);
  const Vec<double> z = Vec<double>::Random(c.expert_code);
  const auto [h, sigma] = expert_forward<double>(x, z, m.experts[0], c);
  const auto again = expert_forward<double>(x, z, m.experts[0], c);
  EXPECT_EQ(h, again.first);
  EXPECT_EQ(sigma, again.second);
  const std::vector<double> p{x(0), x(1), x(2)};
  const auto pe = nn::positional_encode<double>(p, c.pos_frequencies);
  Vec<double> in(c.expert_input_width());
  in.head(3) = x;
  for (std::size_t i = 0; i < pe.size(); ++i) in(3 + static_cast<Eigen::Index>(i)) = pe[i];
  in.tail(c.expert_code) = z;
  const Vec<double> out = nn::mlp_forward(m.experts[0], in);
  EXPECT_NEAR(sigma, std::log1p(std::exp(out(c.feature_width))) + 1e-6, 1e-12);
  for (int i = 0; i < c.feature_width; ++i) EXPECT_NEAR(h(i), out(i), 1e-12);
}

TEST(ExpertForward, NonFiniteInputThrows) {
  const auto c = tiny_config(1);
  const auto m = random_model<double>(c, 9);
  EXPECT_THROW(expert_forward<double>(V3(NAN, 0, 0), Vec<double>::Zero(c.expert_code), m.experts[0], c), ContractError);
}

TEST(TextureHead, ZeroHeadGivesGray) {
  const auto c = tiny_config(1);
  const auto m = MoEParams<double>::zeros(c);
  const auto rgb = texture_head<double>(Vec<double>::Random(c.feature_width), V3(0, 0, 1), Vec<double>::Random(c.texture_code),
                                        m.texture_head, c);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(rgb(i), 0.5);
}

TEST(TextureHead, RangeAndOracle) {
  const auto c = tiny_config(1);
  const auto m = random_model<double>(c, 4);
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const Vec<double> h = Vec<double>::Random(c.feature_width) * 5.0;
    const V3 d = V3(rng.normal(), rng.normal(), rng.normal()).normalized();
    const Vec<double> zt = Vec<double>::Random(c.texture_code);
    const auto rgb = texture_head<double>(h, d, zt, m.texture_head, c);
    EXPECT_TRUE((rgb.array() > 0).all() && (rgb.array() < 1).all());
    Vec<double> in(c.head_input_width());
    in << h, nn::encode_columns(Mat<double>(d), c.dir_frequencies).col(0), zt;
    const Vec<double> hid = (m.texture_head.layers[0].weight * in + m.texture_head.layers[0].bias).cwiseMax(0.0);
    const Vec<double> pre = m.texture_head.layers[1].weight * hid + m.texture_head.layers[1].bias;
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(rgb(i), 1 / (1 + std::exp(-pre(i))), 1e-12);
  }
}

TEST(TextureHead, DimensionMismatchThrows) {
  const auto c = tiny_config(1);
  const auto m = random_model<double>(c, 4);
  EXPECT_THROW(texture_head<double>(Vec<double>::Zero(c.feature_width + 1), V3(0, 0, 1), Vec<double>::Zero(c.texture_code),
                                    m.texture_head, c),
               ContractError);
}

TEST(MoeFieldForward, SingleExpertIsForced) {
  const auto c = tiny_config(1);
  const auto m = random_model<double>(c, 5);
  const auto code = random_code<double>(c, 6);
  const V3 x(0.1, 0.2, -0.3), d(0, 0, -1);
  const auto mapped = map_shape_code<double>(code.shape, m);
  const auto [h, sigma] = expert_forward<double>(x, mapped[0], m.experts[0], c);
  const auto rgb = texture_head<double>(h, d, code.texture, m.texture_head, c);
  Rng rng(1);
  for (double tau : {0.1, 1.0, 10.0}) {
    const auto [s, sel] = moe_field_forward<double>(x, d, code, m, tau, SelectionMode::stochastic, rng);
    EXPECT_EQ(sel.index, 0);
    EXPECT_NEAR(s.sigma, sigma, 1e-12);
    EXPECT_NEAR((s.color - rgb).norm(), 0.0, 1e-12);
  }
}

TEST(MoeFieldForward, ConstantExpertsMaxPooling) {
  const auto m = constant_experts<double>({1.0, 2.0}, Routing::hindsight);
  const auto code = gnerf::testing::zero_code<double>(m.config);
  Rng rng(0);
  for (double x1 : {-0.4, 0.0, 0.3}) {
    const auto [s, sel] = moe_field_forward<double>(V3(x1, 0.1, 0), V3(0, 0, 1), code, m, 1.0, SelectionMode::deterministic, rng);
    EXPECT_NEAR(s.sigma, 2.0, 1e-12);
    EXPECT_EQ(sel.mask, (std::vector<double>{0, 1}));
  }
}

TEST(MoeFieldForward, SeededReplay) {
  const auto c = tiny_config(4);
  const auto m = random_model<double>(c, 8);
  const auto code = random_code<double>(c, 2);
  auto run = [&] {
    Rng rng(99);
    std::vector<int> picks;
    for (int i = 0; i < 200; ++i)
      picks.push_back(moe_field_forward<double>(V3(0.01 * i - 1, 0, 0), V3(0, 0, 1), code, m, 2.0, SelectionMode::stochastic, rng)
                          .second.index);
    return picks;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_GT(std::set<int>(a.begin(), a.end()).size(), 1u);
}

TEST(MoeFieldForward, SelectorInvariants) {
  const auto c = tiny_config(4);
  const auto m = random_model<double>(c, 8);
  const auto code = random_code<double>(c, 2);
  Rng rng(3), pts(4);
  for (int i = 0; i < 300; ++i) {
    const V3 x(pts.uniform(-0.5, 0.5), pts.uniform(-0.5, 0.5), pts.uniform(-0.5, 0.5));
    const auto [s, sel] = moe_field_forward<double>(x, V3(0, 1, 0), code, m, 0.8, SelectionMode::stochastic, rng);
    double total = 0, mask = 0;
    for (double l : sel.logits) total += std::exp(l);
    for (double v : sel.mask) mask += v;
    EXPECT_NEAR(total, 1.0, 1e-6);
    EXPECT_EQ(mask, 1.0);
    EXPECT_EQ(sel.index, argmax_index<double>(sel.logits, sel.noise));
    EXPECT_EQ(s.sigma, sel.sigma);
  }
}

TEST(FieldForward, DeterministicDensityIsMaxAndViewIndependent) {
  const auto c = tiny_config(4);
  const auto m = random_model<double>(c, 12);
  auto b = random_batch(c, 400, 3, 5);
  const auto r = field_forward(m, b, Selection<double>{});
  for (Eigen::Index p = 0; p < b.size(); ++p) EXPECT_EQ(r.sigma(p), r.expert_sigma.col(p).maxCoeff());
  b.directions = gnerf::testing::random_unit_columns(400, 77);
  const auto r2 = field_forward(m, b, Selection<double>{});
  EXPECT_EQ(r.sigma, r2.sigma);
  const Mat<double> noise = gumbel_matrix(4, 400, 1);
  const auto r3 = field_forward(m, b, Selection<double>{SelectionMode::stochastic, 1.0, &noise});
  b.directions = gnerf::testing::random_unit_columns(400, 78);
  EXPECT_EQ(r3.sigma, field_forward(m, b, Selection<double>{SelectionMode::stochastic, 1.0, &noise}).sigma);
}

TEST(FieldForward, StochasticModeNeedsNoise) {
  const auto c = tiny_config(2);
  const auto m = random_model<double>(c, 12);
  const auto b = random_batch(c, 5, 1, 5);
  EXPECT_THROW(field_forward(m, b, Selection<double>{SelectionMode::stochastic, 1.0, nullptr}), ContractError);
}

TEST(GateForward, ConstantLogitsIgnoreDensities) {
  auto m = constant_experts<double>({3.0, 0.5}, Routing::foresight);
  for (auto& l : m.gate.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  m.gate.layers.back().bias(1) = 5.0;
  const auto code = gnerf::testing::zero_code<double>(m.config);
  for (double x1 : {-0.4, 0.0, 0.4}) {
    const auto [s, n] = gate_forward<double>(V3(x1, 0, 0), V3(0, 0, 1), code, m);
    EXPECT_EQ(n, 1);
    EXPECT_NEAR(s.sigma, 0.5, 1e-9);
  }
}

TEST(GateForward, SingleExpertMatchesHindsight) {
  const auto c1 = tiny_config(1);
  auto hind = random_model<double>(c1, 21);
  auto fore = MoEParams<double>::zeros(tiny_config(1, Routing::foresight));
  fore.mapper_weight = hind.mapper_weight;
  fore.mapper_bias = hind.mapper_bias;
  fore.experts = hind.experts;
  fore.texture_head = hind.texture_head;
  const auto code = random_code<double>(c1, 3);
  Rng rng(1);
  const V3 x(0.2, 0.1, 0.0), d(0, 0, 1);
  const auto a = moe_field_forward<double>(x, d, code, hind, 1.0, SelectionMode::deterministic, rng).first;
  const auto [b, n] = gate_forward<double>(x, d, code, fore);
  EXPECT_EQ(n, 0);
  EXPECT_EQ(a.sigma, b.sigma);
  EXPECT_EQ(a.color, b.color);
}

TEST(GateForward, HardGateJumpsAcrossPlane) {
  const auto m = constant_experts<double>({1.0, 2.0}, Routing::foresight);
  const auto code = gnerf::testing::zero_code<double>(m.config);
  const auto left = gate_forward<double>(V3(-1e-4, 0.1, 0), V3(0, 0, 1), code, m);
  const auto right = gate_forward<double>(V3(1e-4, 0.1, 0), V3(0, 0, 1), code, m);
  EXPECT_EQ(left.second, 0);
  EXPECT_EQ(right.second, 1);
  EXPECT_NEAR(right.first.sigma - left.first.sigma, 1.0, 1e-9);
}

TEST(FieldBackward, NonSelectedExpertsGetNoGradientFromAPoint) {
  const auto c = tiny_config(3);
  const auto m = random_model<double>(c, 31);
  const auto b = random_batch(c, 1, 1, 9);
  const Mat<double> noise = gumbel_matrix(3, 1, 4);
  FieldTape<double> tape;
  const auto r = field_forward(m, b, Selection<double>{SelectionMode::stochastic, 1.0, &noise}, &tape);
  auto g = m.zeros_like();
  Mat<double> ds, dt;
  field_backward<double>(m, tape, Vec<double>::Ones(1), Mat<double>::Ones(3, 1), &g, &ds, &dt);
  for (int n = 0; n < 3; ++n) {
    double total = 0;
    for (const auto& l : g.experts[static_cast<std::size_t>(n)].layers) total += l.weight.cwiseAbs().sum() + l.bias.cwiseAbs().sum();
    total += g.mapper_weight[static_cast<std::size_t>(n)].cwiseAbs().sum();
    if (n == r.expert[0]) EXPECT_GT(total, 0.0);
    else EXPECT_EQ(total, 0.0);
  }
}

class FieldGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(FieldGradient, HindsightMatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  const auto c = tiny_config(2);
  auto m = random_model<double>(c, seed);
  auto b = random_batch(c, 12, 2, seed + 100);
  const Mat<double> noise = gumbel_matrix(2, 12, seed + 200);
  const Selection<double> sel{SelectionMode::stochastic, 0.7, &noise};
  Rng rng(seed + 300);
  Probe probe{Vec<double>(12), Mat<double>(3, 12)};
  for (Eigen::Index i = 0; i < 12; ++i) probe.wsigma(i) = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < 36; ++i) probe.wrgb.data()[i] = rng.uniform(-1, 1);

  FieldTape<double> tape;
  const auto r0 = field_forward(m, b, sel, &tape);
  auto g = m.zeros_like();
  Mat<double> ds, dt;
  field_backward<double>(m, tape, probe.wsigma, probe.wrgb, &g, &ds, &dt);

  const double h = 1e-6;
  auto check = [&](double* p, double analytic, const std::string& what) {
    const double keep = *p;
    *p = keep + h;
    const auto up = field_forward(m, b, sel);
    *p = keep - h;
    const auto down = field_forward(m, b, sel);
    *p = keep;
    if (up.expert != r0.expert || down.expert != r0.expert) return;  // selection flipped: not differentiable here
    const double fd = (probe(up) - probe(down)) / (2 * h);
    const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-5});
    EXPECT_LT(rel, 1e-4) << what << " analytic " << analytic << " fd " << fd;
  };
  auto pv = nn::param_views<double>(m);
  auto gv = nn::param_views<double>(g);
  for (std::size_t k = 0; k < pv.size(); ++k)
    for (Eigen::Index i = 0; i < pv[k].size(); ++i) check(pv[k].data + i, gv[k].data[i], pv[k].name);
  for (Eigen::Index i = 0; i < b.shape_codes.size(); ++i) check(b.shape_codes.data() + i, ds.data()[i], "shape code");
  for (Eigen::Index i = 0; i < b.texture_codes.size(); ++i) check(b.texture_codes.data() + i, dt.data()[i], "texture code");
}

INSTANTIATE_TEST_SUITE_P(Seeds, FieldGradient, ::testing::Range<std::uint64_t>(1, 6));

TEST(FieldBackward, ForesightExpertPathMatchesFiniteDifferences) {
  // Gate logits are frozen by zeroing the gate's input weights on the code, so the
  // only code path is through the mapped expert codes.
  const auto c = tiny_config(2, Routing::foresight);
  auto m = random_model<double>(c, 41);
  m.gate.layers[0].weight.rightCols(c.shape_code).setZero();
  auto b = random_batch(c, 10, 2, 42);
  Rng rng(43);
  Probe probe{Vec<double>(10), Mat<double>(3, 10)};
  for (Eigen::Index i = 0; i < 10; ++i) probe.wsigma(i) = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < 30; ++i) probe.wrgb.data()[i] = rng.uniform(-1, 1);
  FieldTape<double> tape;
  const auto r0 = field_forward(m, b, Selection<double>{}, &tape);
  auto g = m.zeros_like();
  Mat<double> ds, dt;
  field_backward<double>(m, tape, probe.wsigma, probe.wrgb, &g, &ds, &dt);
  const double h = 1e-6;
  auto fd = [&](double* p) {
    const double keep = *p;
    *p = keep + h;
    const double up = probe(field_forward(m, b, Selection<double>{}));
    *p = keep - h;
    const double down = probe(field_forward(m, b, Selection<double>{}));
    *p = keep;
    return (up - down) / (2 * h);
  };
  auto pv = nn::param_views<double>(m);
  auto gv = nn::param_views<double>(g);
  for (std::size_t k = 0; k < pv.size(); ++k) {
    if (pv[k].name.rfind("gate", 0) == 0) continue;
    for (Eigen::Index i = 0; i < pv[k].size(); ++i) {
      const double f = fd(pv[k].data + i), a = gv[k].data[i];
      EXPECT_LT(std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-5}), 1e-4) << pv[k].name;
    }
  }
  for (Eigen::Index i = 0; i < b.texture_codes.size(); ++i) {
    const double f = fd(b.texture_codes.data() + i);
    EXPECT_LT(std::abs(dt.data()[i] - f) / std::max({std::abs(f), 1e-5}), 1e-4);
  }
}

TEST(FieldBackward, ForesightGateGradientIsStraightThrough) {
  // One point: dL/dlogit_j = (dsigma * sigma + dh . h) * (delta_jn - p_j).
  const auto c = tiny_config(3, Routing::foresight);
  const auto m = random_model<double>(c, 51);
  const auto b = random_batch(c, 1, 1, 52);
  FieldTape<double> tape;
  const auto r = field_forward(m, b, Selection<double>{}, &tape);
  auto g = m.zeros_like();
  Mat<double> ds, dt;
  const Vec<double> dsig = Vec<double>::Constant(1, 0.7);
  const Mat<double> drgb = Mat<double>::Constant(3, 1, -0.4);
  field_backward<double>(m, tape, dsig, drgb, &g, &ds, &dt);

  // dL/dh from the head, by finite differences on the selected feature.
  const int n = r.expert[0];
  const Vec<double> hsel = tape.selected_feature.col(0);
  Vec<double> in(c.head_input_width());
  in << hsel, nn::encode_columns(b.directions, c.dir_frequencies).col(0), b.texture_codes.col(0);
  double dh_dot_h = 0;
  for (int i = 0; i < c.feature_width; ++i) {
    Vec<double> up = in, dn = in;
    up(i) += 1e-6;
    dn(i) -= 1e-6;
    const double d = (nn::mlp_forward(m.texture_head, up) - nn::mlp_forward(m.texture_head, dn)).dot(drgb.col(0)) / 2e-6;
    dh_dot_h += d * hsel(i);
  }
  const double dot = 0.7 * r.sigma(0) + dh_dot_h;
  for (int j = 0; j < 3; ++j) {
    const double pj = tape.gate_prob(j, 0);
    const double expect = dot * ((j == n ? 1.0 : 0.0) - pj);
    EXPECT_NEAR(g.gate.layers.back().bias(j), expect, 1e-6 * std::max(1.0, std::abs(expect)));
  }
}

TEST(FieldBackward, ForesightBalanceTermGradient) {
  const auto c = tiny_config(3, Routing::foresight);
  auto m = random_model<double>(c, 61);
  const auto b = random_batch(c, 40, 2, 62);
  FieldTape<double> tape;
  const auto r = field_forward(m, b, Selection<double>{}, &tape);
  auto g = m.zeros_like();
  Mat<double> ds, dt;
  field_backward<double>(m, tape, Vec<double>::Zero(40), Mat<double>::Zero(3, 40), &g, &ds, &dt, 1.0);
  // With the dispatch fractions held fixed the balance term is smooth in the gate logits.
  auto& bias = m.gate.layers.back().bias;
  for (int j = 0; j < 3; ++j) {
    const double keep = bias(j);
    bias(j) = keep + 1e-6;
    FieldTape<double> t1;
    field_forward(m, b, Selection<double>{}, &t1);
    bias(j) = keep - 1e-6;
    FieldTape<double> t2;
    field_forward(m, b, Selection<double>{}, &t2);
    bias(j) = keep;
    double up = 0, dn = 0;
    for (int n = 0; n < 3; ++n) {
      up += tape.balance_fraction[static_cast<std::size_t>(n)] * t1.gate_prob.row(n).mean();
      dn += tape.balance_fraction[static_cast<std::size_t>(n)] * t2.gate_prob.row(n).mean();
    }
    const double fd = 3.0 * (up - dn) / 2e-6;
    EXPECT_NEAR(g.gate.layers.back().bias(j), fd, 1e-6);
  }
  EXPECT_GE(r.balance_loss, 0.0);
}

TEST(ModelConfig, TextRoundTripAndErrors) {
  auto c = tiny_config(3, Routing::foresight);
  c.sigma_floor = 2.5e-6;
  EXPECT_EQ(ModelConfig::from_text(c.to_text()), c);
  EXPECT_THROW(ModelConfig::from_text("experts = 0\n"), ContractError);
  EXPECT_THROW(ModelConfig::from_text("widgets = 3\n"), ContractError);
  EXPECT_THROW(ModelConfig::from_text("experts 3\n"), ContractError);
  EXPECT_EQ(ModelConfig::from_text("# comment\nexperts = 2 # trailing\n").experts, 2);
}

TEST(ModelConfig, MatchedBaselineIsWithinFivePercent) {
  const ModelConfig c;
  const auto b = matched_baseline(c);
  EXPECT_EQ(b.routing, Routing::foresight);
  const double a = static_cast<double>(parameter_count(c));
  const double f = static_cast<double>(parameter_count(b));
  EXPECT_LT(std::abs(a - f) / a, 0.05);
  EXPECT_LE(std::abs(a - f), std::abs(a - static_cast<double>(parameter_count([&] {
                                          auto u = c;
                                          u.routing = Routing::foresight;
                                          return u;
                                        }()))));
}

TEST(MoEParams, InitIsDeterministicAndCastRoundTrips) {
  const auto c = tiny_config(2);
  const auto a = MoEParams<float>::init(c, 5);
  const auto b = MoEParams<float>::init(c, 5);
  EXPECT_EQ(a.experts[1].layers[0].weight, b.experts[1].layers[0].weight);
  const auto d = a.cast<double>().cast<float>();
  EXPECT_EQ(d.texture_head.layers[1].weight, a.texture_head.layers[1].weight);
  EXPECT_NE(MoEParams<float>::init(c, 6).experts[0].layers[0].weight, a.experts[0].layers[0].weight);
}
