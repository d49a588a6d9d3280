#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "stairpool/error.hpp"
#include "stairpool/unet.hpp"

using namespace stairpool;
using stairpool::test_support::grad_check;
using stairpool::test_support::random_tensor;

namespace {

std::vector<std::string> labels(const std::vector<PathSpec>& ps) {
  std::vector<std::string> out;
  for (const auto& p : ps) out.push_back(p.label());
  return out;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Io;
}

// Direct 2x2 window max on a (n, c, h, w) tensor.
Tensor max2x2(const Tensor& x) {
  const auto& s = x.shape();
  Tensor y({s[0], s[1], s[2] / 2, s[3] / 2});
  std::int64_t o = 0;
  for (std::int64_t nc = 0; nc < s[0] * s[1]; ++nc)
    for (std::int64_t i = 0; i < s[2] / 2; ++i)
      for (std::int64_t j = 0; j < s[3] / 2; ++j, ++o) {
        const double* p = x.data().data() + nc * s[2] * s[3];
        y[o] = std::max({p[2 * i * s[3] + 2 * j], p[2 * i * s[3] + 2 * j + 1], p[(2 * i + 1) * s[3] + 2 * j],
                         p[(2 * i + 1) * s[3] + 2 * j + 1]});
      }
  return y;
}

StairPoolBlock make_block(int ndim, std::int64_t C, double noise, unsigned seed = 3) {
  std::mt19937_64 rng(seed);
  StairPoolBlock::Options opts;
  opts.init_noise = noise;
  return StairPoolBlock("blk", ndim, C, enumerate_paths(ndim), rng, opts);
}

ModelConfig small_config(PoolingChoice pooling, std::int64_t base = 4) {
  ModelConfig cfg;
  cfg.base_channels = base;
  cfg.num_classes = 3;
  cfg.pooling = {pooling, pooling, pooling};
  return cfg;
}

void expect_equal(const Tensor& a, const Tensor& b) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]) << "at " << i;
}

}  // namespace

TEST(PathSpec, Enumerate2DCanonicalOrder) {
  EXPECT_EQ(labels(enumerate_paths(2)), (std::vector<std::string>{"P21>P12", "P12>P21"}));
}

TEST(PathSpec, Enumerate3DHasSixValidPaths) {
  const auto ps = enumerate_paths(3);
  ASSERT_EQ(ps.size(), 6u);
  EXPECT_EQ(ps.front().label(), "P211>P121>P112");
  for (const auto& p : ps) EXPECT_NO_THROW(validate_path(p, {2, 2, 2}));
  for (const auto& p : enumerate_paths(2)) EXPECT_NO_THROW(validate_path(p, {2, 2}));
}

TEST(PathSpec, EnumerateRejectsOtherNdim) {
  EXPECT_EQ(code_of([] { enumerate_paths(1); }), Errc::UnsupportedNdim);
  EXPECT_EQ(code_of([] { enumerate_paths(4); }), Errc::UnsupportedNdim);
}

TEST(PathSpec, LabelRoundTrip) {
  for (int nd : {2, 3}) {
    for (const auto& p : enumerate_paths(nd)) EXPECT_EQ(PathSpec::parse(p.label()), p);
  }
  EXPECT_EQ(code_of([] { PathSpec::parse("P2>P1"); }), Errc::UnknownPathLabel);
  EXPECT_EQ(code_of([] { PathSpec::parse("Q21>P12"); }), Errc::UnknownPathLabel);
  EXPECT_EQ(code_of([] { PathSpec::parse("P21>P121"); }), Errc::UnknownPathLabel);
}

TEST(PathSpec, Validation) {
  EXPECT_NO_THROW(validate_path(PathSpec{2, {{2, 1}, {1, 2}}}, {2, 2}));
  EXPECT_EQ(code_of([] { validate_path(PathSpec{2, {{2, 2}}}, {2, 2}); }), Errc::NotNarrow);
  EXPECT_EQ(code_of([] { validate_path(PathSpec{3, {{1, 2, 2}, {2, 1, 2}, {2, 2, 1}}}, {2, 2, 2}); }),
            Errc::ProductMismatch);
  EXPECT_EQ(code_of([] { validate_path(PathSpec{2, {{2, 1}}}, {2, 2}); }), Errc::ProductMismatch);
  try {
    validate_path(PathSpec{3, {{1, 2, 2}, {2, 1, 2}, {2, 2, 1}}}, {2, 2, 2});
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("axis 0: got 4, want 2"), std::string::npos) << e.what();
  }
}

TEST(StairBlock, NonstandardPathsNeedOverride) {
  std::mt19937_64 rng(1);
  std::vector<PathSpec> wide{PathSpec{3, {{1, 2, 2}, {2, 1, 2}, {2, 2, 1}}}};
  EXPECT_EQ(code_of([&] { StairPoolBlock("b", 3, 2, wide, rng); }), Errc::ProductMismatch);
  StairPoolBlock::Options opts;
  opts.allow_nonstandard = true;
  StairPoolBlock blk("b", 3, 2, wide, rng, opts);
  EXPECT_EQ(blk.stride(), (Extents{4, 4, 4}));
  Tape tape(Tape::Mode::Inference);
  Var y = blk.forward(tape, tape.constant(Tensor({1, 2, 8, 8, 8}, 1.0)));
  EXPECT_EQ(tape.value(y).shape(), (Shape{1, 2, 2, 2, 2}));
}

TEST(StairBlock, PathShapeAndPacing) {
  auto blk = make_block(2, 4, 0.01);
  std::mt19937_64 rng(5);
  Tape tape(Tape::Mode::Inference);
  Var x = tape.constant(random_tensor({1, 4, 8, 8}, rng));
  for (std::size_t i = 0; i < blk.num_paths(); ++i) {
    EXPECT_EQ(tape.value(blk.path_forward(tape, x, i)).shape(), (Shape{1, 4, 4, 4}));
  }
  // Step one of P21>P12 halves the height only.
  const PathSpec& first = blk.paths()[0];
  ASSERT_EQ(first.label(), "P21>P12");
  Var step1 = max_pool(tape, tape.constant(Tensor({1, 1, 8, 8})), first.steps[0], first.steps[0]);
  EXPECT_EQ(tape.value(step1).shape(), (Shape{1, 1, 4, 8}));
  EXPECT_EQ(tape.value(step1).size(), 64 / 2);
}

TEST(StairBlock, IdentityConvsReduceToMaxPool) {
  auto blk = make_block(2, 3, 0.0);
  std::mt19937_64 rng(7);
  const Tensor xv = random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0);
  const Tensor want = max2x2(xv);
  Tape tape(Tape::Mode::Inference);
  Var x = tape.constant(xv);
  for (std::size_t i = 0; i < blk.num_paths(); ++i) expect_equal(tape.value(blk.path_forward(tape, x, i)), want);
  // The fused output is the mean of identical paths.
  const Tensor& z = tape.value(blk.forward(tape, x));
  for (std::int64_t i = 0; i < z.size(); ++i) EXPECT_NEAR(z[i], want[i], 1e-15);
}

TEST(StairBlock, FusedShape) {
  auto blk = make_block(2, 8, 0.01);
  Tape tape(Tape::Mode::Inference);
  std::vector<Var> ys;
  Var z = blk.forward(tape, tape.constant(Tensor({1, 8, 16, 16}, 0.5)), &ys);
  EXPECT_EQ(tape.value(z).shape(), (Shape{1, 8, 8, 8}));
  ASSERT_EQ(ys.size(), 2u);
  EXPECT_EQ(blk.fusion().weight.value.shape(), (Shape{8, 16, 1, 1}));
}

TEST(StairBlock, SinglePathIdentityFusionEqualsPath) {
  auto blk = make_block(2, 3, 0.05).select(1);
  Tensor& w = blk.fusion().weight.value;
  std::fill(w.data().begin(), w.data().end(), 0.0);
  for (std::int64_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  std::mt19937_64 rng(2);
  Tape tape(Tape::Mode::Inference);
  Var x = tape.constant(random_tensor({1, 3, 8, 8}, rng));
  expect_equal(tape.value(blk.forward(tape, x)), tape.value(blk.path_forward(tape, x, 0)));
}

TEST(StairBlock, ActiveMask) {
  auto blk = make_block(2, 2, 0.05);
  EXPECT_EQ(code_of([&] { blk.set_active_paths({false, false}); }), Errc::NoActivePaths);
  EXPECT_EQ(code_of([&] { blk.set_active_paths({true}); }), Errc::BadPathIndex);
  std::mt19937_64 rng(4);
  const Tensor xv = random_tensor({1, 2, 8, 8}, rng);
  Tape tape(Tape::Mode::Inference);
  Var x = tape.constant(xv);
  const Tensor via_subset = tape.value(blk.forward_subset(tape, x, {1}));
  blk.set_active_paths({false, true});
  expect_equal(tape.value(blk.forward(tape, x)), via_subset);
}

TEST(StairBlock, Errors) {
  auto blk = make_block(2, 2, 0.0);
  Tape tape(Tape::Mode::Inference);
  EXPECT_EQ(code_of([&] { blk.forward(tape, tape.constant(Tensor({1, 3, 8, 8}))); }), Errc::ChannelMismatch);
  EXPECT_EQ(code_of([&] { blk.forward(tape, tape.constant(Tensor({1, 2, 6, 5}))); }), Errc::NonDivisibleShape);
  EXPECT_EQ(code_of([&] { blk.path_forward(tape, tape.constant(Tensor({1, 2, 8, 8})), 2); }), Errc::BadPathIndex);
}

TEST(StairBlock, GradientsMatchFiniteDifferences) {
  auto blk = make_block(2, 2, 0.3);
  std::mt19937_64 rng(11);
  std::vector<Parameter*> params = blk.parameters();
  std::vector<Tensor> inputs{random_tensor({1, 2, 4, 4}, rng)};
  for (const Parameter* p : params) inputs.push_back(p->value);
  std::vector<std::size_t> wrt;
  for (std::size_t k = 0; k < inputs.size(); ++k) wrt.push_back(k);

  // The block's forward rebuilt from leaves, in parameters() order.
  auto fn = [&](Tape& t, const std::vector<Var>& v) {
    std::vector<Var> ys;
    for (std::size_t i = 0; i < blk.num_paths(); ++i) {
      Var y = v[0];
      const auto& spec = blk.paths()[i];
      for (std::size_t s = 0; s < spec.steps.size(); ++s) {
        const std::size_t base = 1 + (i * spec.steps.size() + s) * 2;
        y = relu(t, conv(t, max_pool(t, y, spec.steps[s], spec.steps[s]), v[base], v[base + 1], {1, 1}));
      }
      ys.push_back(y);
    }
    Var z = conv(t, concat(t, ys), v[v.size() - 2], v.back(), {0, 0});
    return sum(t, mul(t, z, z));
  };
  const auto r = grad_check(fn, inputs, wrt);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 100u);
}

TEST(StairBlock, BlockForwardGradientThroughParameters) {
  auto blk = make_block(2, 2, 0.3);
  std::mt19937_64 rng(12);
  const Tensor xv = random_tensor({1, 2, 4, 4}, rng);
  Tape tape;
  Var z = blk.forward(tape, tape.constant(xv));
  GradientMap g = backward(tape, sum(tape, mul(tape, z, z)));

  Parameter& fw = blk.fusion().weight;
  const auto* analytic = g.of(fw);
  ASSERT_NE(analytic, nullptr);
  const double eps = 1e-5;
  for (std::int64_t i = 0; i < fw.value.size(); ++i) {
    auto loss = [&] {
      Tape t(Tape::Mode::Inference);
      Var zz = blk.forward(t, t.constant(xv));
      return t.value(sum(t, mul(t, zz, zz)))[0];
    };
    const double orig = fw.value[i];
    fw.value[i] = orig + eps;
    const double up = loss();
    fw.value[i] = orig - eps;
    const double down = loss();
    fw.value[i] = orig;
    EXPECT_LT(test_support::rel_error((*analytic)[static_cast<std::size_t>(i)], (up - down) / (2 * eps)), 1e-4);
  }
}

TEST(StairBlock, ParamCountClosedForm) {
  const std::int64_t C = 5;
  auto blk = make_block(2, C, 0.0);
  // 2 paths x 2 steps of 3x3 C->C convs, then a 1x1 (2C)->C fusion.
  EXPECT_EQ(blk.param_count(), 4 * (9 * C * C + C) + (2 * C * C + C));
  EXPECT_EQ(blk.select(0).param_count(), 2 * (9 * C * C + C) + (C * C + C));
  auto blk3 = make_block(3, C, 0.0);
  EXPECT_EQ(blk3.param_count(), 18 * (27 * C * C + C) + (6 * C * C + C));
}

TEST(ParamCount, SingleConv) {
  std::mt19937_64 rng(1);
  EXPECT_EQ(make_conv("c", 2, 1, 1, 3, rng).param_count(), 10);
}

TEST(ModelConfig, Validation) {
  ModelConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  auto field_of = [](ModelConfig c) -> std::string {
    try {
      c.validate();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidConfig);
      return e.what();
    }
    return "";
  };
  ModelConfig bad = cfg;
  bad.ndim = 4;
  EXPECT_NE(field_of(bad).find("model.ndim"), std::string::npos);
  bad = cfg;
  bad.depth = 4;
  EXPECT_NE(field_of(bad).find("model.depth"), std::string::npos);
  bad = cfg;
  bad.base_channels = 128;
  EXPECT_NE(field_of(bad).find("model.base_channels"), std::string::npos);
  bad = cfg;
  bad.pooling[1] = PoolingChoice::stair_selected("P211>P121>P112");
  EXPECT_NE(field_of(bad).find("model.pooling.step2"), std::string::npos);
}

TEST(PoolingChoice, TextRoundTrip) {
  for (const auto& p : {PoolingChoice::plain(), PoolingChoice::stair_full(), PoolingChoice::stair_selected("P12>P21")}) {
    EXPECT_EQ(PoolingChoice::parse(p.to_string()), p);
  }
  EXPECT_EQ(code_of([] { PoolingChoice::parse("average"); }), Errc::InvalidConfig);
}

TEST(UNet, ShapesAndChannelSchedule) {
  ModelConfig cfg;
  cfg.base_channels = 16;
  cfg.num_classes = 4;
  const UNet m = build_unet(cfg, 1);
  std::mt19937_64 rng(3);
  const ForwardTrace tr = forward(m, random_tensor({2, 1, 64, 64}, rng), true);
  EXPECT_EQ(tr.logits.shape(), (Shape{2, 4, 64, 64}));
  EXPECT_EQ(tr.z[0].shape(), (Shape{2, 16, 32, 32}));
  EXPECT_EQ(tr.z[1].shape(), (Shape{2, 32, 16, 16}));
  EXPECT_EQ(tr.z[2].shape(), (Shape{2, 64, 8, 8}));
  EXPECT_EQ(tr.x_o.shape(), (Shape{2, 16, 64, 64}));
  const auto& enc = m.encoders();
  for (int l = 0; l < kUNetDepth; ++l) EXPECT_EQ(enc[l].conv2.out_channels(), 16 << l);
  EXPECT_EQ(m.find_parameter("bottleneck.conv2.w")->value.dim(0), 128);
}

TEST(UNet, ThreeDimensionalShapes) {
  ModelConfig cfg = small_config(PoolingChoice::stair_full(), 2);
  cfg.ndim = 3;
  const UNet m = build_unet(cfg, 1);
  const ForwardTrace tr = forward(m, Tensor({1, 1, 8, 8, 8}, 0.5), true);
  EXPECT_EQ(tr.logits.shape(), (Shape{1, 3, 8, 8, 8}));
  EXPECT_EQ(tr.y[0].size(), 6u);
  EXPECT_EQ(tr.z[2].shape(), (Shape{1, 8, 1, 1, 1}));
}

TEST(UNet, StairHasMoreParameters) {
  const UNet plain = build_unet(small_config(PoolingChoice::plain()), 1);
  const UNet stair = build_unet(small_config(PoolingChoice::stair_full()), 1);
  EXPECT_GT(param_count(stair), param_count(plain));
  std::int64_t extra = 0;
  for (int l = 1; l <= kUNetDepth; ++l) extra += stair.stair_block(l).param_count();
  EXPECT_EQ(param_count(stair), param_count(plain) + extra);
}

TEST(UNet, ParamCountIndependentWalk) {
  const ModelConfig cfg = small_config(PoolingChoice::plain(), 4);
  const std::int64_t b = 4, k = 9;
  auto conv = [&](std::int64_t in, std::int64_t out) { return in * out * k + out; };
  std::int64_t want = conv(1, b) + conv(b, b) + conv(b, 2 * b) + conv(2 * b, 2 * b) + conv(2 * b, 4 * b) +
                      conv(4 * b, 4 * b) + conv(4 * b, 8 * b) + conv(8 * b, 8 * b);
  for (std::int64_t c : {4 * b, 2 * b, b}) want += (2 * c * c * 4 + c) + conv(2 * c, c) + conv(c, c);
  want += b * 3 + 3;
  EXPECT_EQ(param_count(build_unet(cfg, 9)), want);
}

TEST(UNet, DeterministicBuild) {
  const UNet a = build_unet(small_config(PoolingChoice::stair_full()), 42);
  const UNet b = build_unet(small_config(PoolingChoice::stair_full()), 42);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    expect_equal(pa[i]->value, pb[i]->value);
  }
}

TEST(UNet, RecordingIsObservationOnly) {
  const UNet m = build_unet(small_config(PoolingChoice::stair_full()), 5);
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng);
  const ForwardTrace full = forward(m, x, true);
  const ForwardTrace bare = forward(m, x, false);
  EXPECT_FALSE(bare.recorded);
  EXPECT_EQ(bare.x_o.size(), 0);
  expect_equal(full.logits, bare.logits);
}

TEST(UNet, InputErrors) {
  const UNet m = build_unet(small_config(PoolingChoice::plain()), 1);
  EXPECT_EQ(code_of([&] { forward(m, Tensor({1, 1, 12, 16}), false); }), Errc::NonDivisibleShape);
  EXPECT_EQ(code_of([&] { forward(m, Tensor({1, 2, 16, 16}), false); }), Errc::ChannelMismatch);
  EXPECT_EQ(code_of([&] { forward_with_path_override(m, Tensor({1, 1, 16, 16}), 1, 0); }), Errc::NotStairStep);
  EXPECT_EQ(code_of([&] { apply_path_selection(m, {std::string("P21>P12"), {}, {}}); }), Errc::NotStairStep);
  EXPECT_EQ(code_of([] { build_unet(ModelConfig{.ndim = 1}, 1); }), Errc::InvalidConfig);
}

TEST(UNet, OverrideErrorsAndShape) {
  const UNet m = build_unet(small_config(PoolingChoice::stair_full()), 1);
  const Tensor x({1, 1, 16, 16}, 0.25);
  EXPECT_EQ(code_of([&] { forward_with_path_override(m, x, 2, 2); }), Errc::BadPathIndex);
  EXPECT_EQ(code_of([&] { forward_with_path_override(m, x, 4, 0); }), Errc::NotStairStep);
  EXPECT_EQ(code_of([&] { apply_path_selection(m, {std::string("P12>P12"), {}, {}}); }), Errc::UnknownPathLabel);
  EXPECT_EQ(forward_with_path_override(m, x, 2, 1).logits.shape(), (Shape{1, 3, 16, 16}));
}

TEST(UNet, OverridesChangeOutput) {
  const UNet m = build_unet(small_config(PoolingChoice::stair_full()), 6);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({1, 1, 16, 16}, rng);
  const Tensor a = forward_with_path_override(m, x, 1, 0).x_o;
  const Tensor b = forward_with_path_override(m, x, 1, 1).x_o;
  double diff = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
  EXPECT_GT(diff, 0.0);
}

TEST(UNet, SinglePathOverrideIsNormalForward) {
  ModelConfig cfg = small_config(PoolingChoice::stair_selected("P12>P21"));
  const UNet m = build_unet(cfg, 3);
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({1, 1, 16, 16}, rng);
  expect_equal(forward_with_path_overrides(m, x, {0, 0, 0}).logits, forward(m, x, false).logits);
}

TEST(UNet, PrunedModelMatchesOverriddenForward) {
  const UNet m = build_unet(small_config(PoolingChoice::stair_full()), 21);
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({2, 1, 16, 16}, rng);
  const PathSelection sel{std::string("P12>P21"), std::string("P21>P12"), std::string("P12>P21")};
  const UNet pruned = apply_path_selection(m, sel);
  EXPECT_LT(param_count(pruned), param_count(m));
  EXPECT_EQ(pruned.config().pooling[0], PoolingChoice::stair_selected("P12>P21"));
  const ForwardTrace want = forward_with_path_overrides(m, x, {1, 0, 1});
  const ForwardTrace got = forward(pruned, x, true);
  expect_equal(got.logits, want.logits);
  expect_equal(got.x_o, want.x_o);
  // Pruning reduces the count by exactly the dropped path convs and fusion slice.
  std::int64_t dropped = 0;
  for (int l = 1; l <= kUNetDepth; ++l) {
    const auto& blk = m.stair_block(l);
    const std::int64_t C = blk.channels();
    dropped += 2 * (9 * C * C + C) + C * C;
  }
  EXPECT_EQ(param_count(m) - param_count(pruned), dropped);
}

TEST(UNet, ZeroNoiseStairMatchesPlainBaseline) {
  ModelConfig plain_cfg = small_config(PoolingChoice::plain());
  ModelConfig stair_cfg = small_config(PoolingChoice::stair_full());
  stair_cfg.stair_init_noise = 0.0;
  const UNet plain = build_unet(plain_cfg, 13);
  const UNet stair = build_unet(stair_cfg, 13);
  std::mt19937_64 rng(14);
  const Tensor x = random_tensor({2, 1, 32, 32}, rng);
  const Tensor a = forward(plain, x, false).logits;
  const Tensor b = forward(stair, x, false).logits;
  ASSERT_EQ(a.shape(), b.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-8);
}

TEST(UNet, EndToEndGradientProbes) {
  UNet m = build_unet(small_config(PoolingChoice::stair_full(), 2), 17);
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor({1, 1, 8, 8}, rng);
  auto loss_of = [&](Tape& t) {
    Var l = m.forward(t, t.constant(x)).logits;
    return sum(t, mul(t, l, l));
  };
  Tape tape;
  GradientMap g = backward(tape, loss_of(tape));
  auto params = m.parameters();
  std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
  double worst = 0;
  const double eps = 1e-5;
  for (int probe = 0; probe < 24; ++probe) {
    Parameter* p = params[pick_param(rng)];
    std::uniform_int_distribution<std::int64_t> pick(0, p->value.size() - 1);
    const std::int64_t i = pick(rng);
    const double analytic = (*g.of(*p))[static_cast<std::size_t>(i)];
    const double orig = p->value[i];
    auto eval = [&] {
      Tape t(Tape::Mode::Inference);
      return t.value(loss_of(t))[0];
    };
    p->value[i] = orig + eps;
    const double up = eval();
    p->value[i] = orig - eps;
    const double down = eval();
    p->value[i] = orig;
    worst = std::max(worst, test_support::rel_error(analytic, (up - down) / (2 * eps)));
  }
  EXPECT_LT(worst, 1e-4);
}
