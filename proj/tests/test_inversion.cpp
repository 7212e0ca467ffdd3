#include "vera/inversion.hpp"
#include "vera/metrics.hpp"
#include "vera/rng.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>

using namespace vera;

namespace {

LatentConfig inv_latent() {
  LatentConfig cfg;
  cfg.d_identity = cfg.d_expression = cfg.d_pose = cfg.d_age = 4;
  cfg.d_free = 8;
  cfg.d_local = 4;
  cfg.components = 3;
  return cfg;
}

GeneratorConfig inv_generator() {
  GeneratorConfig cfg;
  cfg.resolution = 16;
  cfg.grid = 4;
  cfg.d_fourier = 8;
  cfg.c_feat = 8;
  cfg.coarse_layers = 1;
  cfg.structure_layers = 1;
  cfg.texture_layers = 1;
  cfg.renderer_channels = {8, 6, 6};
  return cfg;
}

TargetLabels labels_from(const GeneratedOutput& g) {
  TargetLabels t;
  t.height = g.height;
  t.width = g.width;
  t.labels.resize(g.semantic.rows());
  for (Eigen::Index p = 0; p < g.semantic.rows(); ++p) {
    Eigen::Index arg = 0;
    g.semantic.row(p).maxCoeff(&arg);
    t.labels[p] = static_cast<int>(arg);
  }
  return t;
}

MaskImage full_mask(int h, int w) { return MaskImage::Constant(h, w, 1); }

}  // namespace

TEST_CASE("seg cross entropy") {
  SUBCASE("one-hot correct prediction is ~0") {
    Mat pred = Mat::Zero(4, 3);
    TargetLabels t{2, 2, Eigen::VectorXi(4)};
    for (int p = 0; p < 4; ++p) {
      t.labels[p] = p % 3;
      pred(p, p % 3) = 1.0;
    }
    CHECK(seg_cross_entropy(pred, t) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform prediction gives log K") {
    Mat pred = Mat::Constant(6, 5, 0.2);
    TargetLabels t{2, 3, Eigen::VectorXi::Zero(6)};
    CHECK(seg_cross_entropy(pred, t) == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
  SUBCASE("frozen 2x2 K=3 hand case") {
    Mat pred(4, 3);
    pred << 0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 1.0 / 3, 1.0 / 3, 1.0 / 3, 0.25, 0.25, 0.5;
    TargetLabels t{2, 2, Eigen::VectorXi(4)};
    t.labels << 0, 2, 1, 2;
    CHECK(seg_cross_entropy(pred, t) == doctest::Approx(1.1127548765402082).epsilon(1e-12));
  }
  SUBCASE("label out of range rejected") {
    Mat pred = Mat::Constant(4, 3, 1.0 / 3);
    TargetLabels t{2, 2, Eigen::VectorXi::Constant(4, 3)};
    CHECK_THROWS_AS(seg_cross_entropy(pred, t), ArgumentError);
  }
}

TEST_CASE("inversion loss identities") {
  const LatentConfig lcfg = inv_latent();
  const GeneratorParams params = GeneratorParams::init(7, inv_generator(), lcfg);
  const MappingParams mapping = MappingParams::init(8, lcfg);
  const ExtendedLatent w_mean = estimate_w_mean(9, 32, mapping, lcfg);
  const PyramidPerceptual perceptual;
  InversionConfig cfg;

  SUBCASE("published defaults are the trace header") {
    CHECK(cfg.weight_l1 == 1.0);
    CHECK(cfg.weight_l2 == 0.1);
    CHECK(cfg.weight_perceptual == 2.0);
    CHECK(cfg.weight_mean == 1.0);
    CHECK(cfg.weight_seg == 1.0);
    CHECK(cfg.steps == 300);
    CHECK(cfg.learning_rate == 0.1);
  }

  SUBCASE("self-target at w_mean zeroes the image and mean terms") {
    const GeneratedOutput out = generate(w_mean, params);
    const LossBreakdown b = inversion_loss(w_mean, image_from_generated(out), labels_from(out),
                                           w_mean, params, lcfg, perceptual, cfg);
    CHECK(b.l1 == 0.0);
    CHECK(b.l2 == 0.0);
    CHECK(b.perceptual == 0.0);
    CHECK(b.mean_reg == 0.0);
    CHECK(b.seg > 0.0);  // soft semantic map never collapses to one-hot
  }

  SUBCASE("all weights zero gives zero loss") {
    InversionConfig zero = cfg;
    zero.weight_l1 = zero.weight_l2 = zero.weight_perceptual = zero.weight_mean = zero.weight_seg = 0;
    const ExtendedLatent w = map_to_w(sample_latent(10, lcfg), mapping, lcfg);
    const GeneratedOutput target = generate(map_to_w(sample_latent(11, lcfg), mapping, lcfg), params);
    const LossBreakdown b = inversion_loss(w, image_from_generated(target), labels_from(target),
                                           w_mean, params, lcfg, perceptual, zero);
    CHECK(b.total == 0.0);
  }

  SUBCASE("breakdown recomposes the total") {
    RandomStream rng(12);
    for (int trial = 0; trial < 5; ++trial) {
      InversionConfig wcfg = cfg;
      wcfg.weight_l1 = rng.uniform();
      wcfg.weight_l2 = rng.uniform();
      wcfg.weight_perceptual = rng.uniform();
      wcfg.weight_mean = rng.uniform();
      wcfg.weight_seg = rng.uniform();
      const ExtendedLatent w = map_to_w(sample_latent(static_cast<std::uint64_t>(20 + trial), lcfg),
                                        mapping, lcfg);
      const GeneratedOutput target =
          generate(map_to_w(sample_latent(static_cast<std::uint64_t>(40 + trial), lcfg), mapping, lcfg),
                   params);
      const LossBreakdown b = inversion_loss(w, image_from_generated(target), labels_from(target),
                                             w_mean, params, lcfg, perceptual, wcfg);
      const double recomposed = wcfg.weight_l1 * b.l1 + wcfg.weight_l2 * b.l2 +
                                wcfg.weight_perceptual * b.perceptual + wcfg.weight_mean * b.mean_reg +
                                wcfg.weight_seg * b.seg;
      REQUIRE(std::abs(recomposed - b.total) < 1e-9);
    }
  }
}

TEST_CASE("inversion loss gradient w.r.t. W+ matches finite differences") {
  const LatentConfig lcfg = inv_latent();
  const GeneratorParams params = GeneratorParams::init(30, inv_generator(), lcfg);
  const MappingParams mapping = MappingParams::init(31, lcfg);
  const ExtendedLatent w_mean = estimate_w_mean(32, 16, mapping, lcfg);
  const GeneratedOutput target = generate(map_to_w(sample_latent(33, lcfg), mapping, lcfg), params);
  const TargetLabels labels = labels_from(target);
  const PyramidPerceptual perceptual;
  const InversionConfig cfg;

  const Mat w_mean_row = flatten(w_mean).transpose();
  const Mat w0 = flatten(map_to_w(sample_latent(34, lcfg), mapping, lcfg)).transpose();

  auto build = [&](ad::Tape& t, const std::vector<Mat>& xs) {
    ad::Var w_flat = t.leaf(xs[0]);
    ExtendedLatentVars wv = split_extended(t, w_flat, lcfg);
    GeneratorVars gv = lift(t, params);
    InversionLossVars v = inversion_loss_graph(t, wv, w_flat, w_mean_row, t.leaf(target.image),
                                               labels, gv, params, perceptual, cfg);
    return std::make_pair(v.total, std::vector<ad::Var>{w_flat});
  };

  ad::Tape t;
  auto [loss, leaves] = build(t, {w0});
  t.backward(loss);
  const Mat analytic = t.grad(leaves[0]);

  RandomStream rng(35);
  const double h = 1e-4;
  for (int probe = 0; probe < 10; ++probe) {
    const Eigen::Index i =
        static_cast<Eigen::Index>(rng.bits() % static_cast<std::uint64_t>(w0.cols()));
    std::vector<Mat> xs = {w0};
    xs[0](0, i) += h;
    ad::Tape tp;
    const double fp = tp.scalar(build(tp, xs).first);
    xs[0](0, i) -= 2 * h;
    ad::Tape tm;
    const double fm = tm.scalar(build(tm, xs).first);
    const double num = (fp - fm) / (2 * h);
    const double scale = std::max({std::abs(num), std::abs(analytic(0, i)), 1e-6});
    REQUIRE(std::abs(num - analytic(0, i)) / scale < 1e-3);
  }
}

TEST_CASE("self-inversion at small scale recovers the target and freezes params") {
  const LatentConfig lcfg = inv_latent();
  const GeneratorParams params = GeneratorParams::init(50, inv_generator(), lcfg);
  const MappingParams mapping = MappingParams::init(51, lcfg);
  const ExtendedLatent w_mean = estimate_w_mean(52, 64, mapping, lcfg);
  const PyramidPerceptual perceptual;
  InversionConfig cfg;
  cfg.steps = 120;

  const ExtendedLatent w_star = map_to_w(sample_latent(53, lcfg), mapping, lcfg);
  const GeneratedOutput target = generate(w_star, params);

  const std::uint64_t params_hash = params.state_hash();
  const InversionResult res = invert_single(image_from_generated(target), labels_from(target),
                                            params, lcfg, w_mean, perceptual, cfg);
  CHECK(params.state_hash() == params_hash);
  CHECK(!res.diverged);
  REQUIRE(res.trace.steps.size() == static_cast<std::size_t>(cfg.steps) + 1);

  // Best-so-far trace never increases.
  for (std::size_t s = 1; s < res.trace.steps.size(); ++s)
    REQUIRE(res.trace.steps[s].best_so_far <= res.trace.steps[s - 1].best_so_far);

  const GeneratedOutput recon = generate(res.latent, params);
  const Image a = image_from_generated(recon), b = image_from_generated(target);
  const double psnr = region_psnr(a, b, full_mask(target.height, target.width));
  CHECK(psnr > 25.0);

  // Trace header echoes the configuration actually used.
  CHECK(res.trace.config.steps == cfg.steps);
  CHECK(res.trace.config.weight_perceptual == cfg.weight_perceptual);
}

TEST_CASE("paired inversion shares the identity slot") {
  LatentConfig lcfg = inv_latent();
  const GeneratorParams params = GeneratorParams::init(60, inv_generator(), lcfg);
  const MappingParams mapping = MappingParams::init(61, lcfg);
  const ExtendedLatent w_mean = estimate_w_mean(62, 64, mapping, lcfg);
  const PyramidPerceptual perceptual;
  InversionConfig cfg;
  cfg.steps = 60;

  // Synthetic pair: same identity, different pose, everything else shared.
  const LatentSample za = sample_latent(63, lcfg);
  LatentSample zb = za;
  zb.global.slot(AttributeSlot::Pose) = sample_latent(64, lcfg).global.slot(AttributeSlot::Pose);
  const ExtendedLatent wa = map_to_w(za, mapping, lcfg);
  const ExtendedLatent wb = map_to_w(zb, mapping, lcfg);
  const GeneratedOutput ta = generate(wa, params);
  const GeneratedOutput tb = generate(wb, params);

  int observed = 0;
  const PairedInversionResult res = invert_paired(
      image_from_generated(ta), labels_from(ta), image_from_generated(tb), labels_from(tb), params,
      lcfg, w_mean, perceptual, cfg, 0,
      [&](int, const ExtendedLatent& a, const ExtendedLatent& b) {
        REQUIRE(a.slot_copy(AttributeSlot::Identity, lcfg) ==
                b.slot_copy(AttributeSlot::Identity, lcfg));
        ++observed;
      });
  CHECK(observed == cfg.steps + 1);
  CHECK(res.first.slot_copy(AttributeSlot::Identity, lcfg) ==
        res.second.slot_copy(AttributeSlot::Identity, lcfg));
  CHECK(res.first.slot_copy(AttributeSlot::Identity, lcfg) == res.shared_identity);

  // Pose slots move apart towards their distinct targets.
  const Vec pose_a = res.first.slot_copy(AttributeSlot::Pose, lcfg);
  const Vec pose_b = res.second.slot_copy(AttributeSlot::Pose, lcfg);
  CHECK((pose_a - pose_b).norm() > 1e-3);
}

TEST_CASE("paired inversion of two copies tracks the single-image inversion") {
  const LatentConfig lcfg = inv_latent();
  const GeneratorParams params = GeneratorParams::init(70, inv_generator(), lcfg);
  const MappingParams mapping = MappingParams::init(71, lcfg);
  const ExtendedLatent w_mean = estimate_w_mean(72, 64, mapping, lcfg);
  const PyramidPerceptual perceptual;
  InversionConfig cfg;
  cfg.steps = 80;

  const GeneratedOutput target = generate(map_to_w(sample_latent(73, lcfg), mapping, lcfg), params);
  const Image img = image_from_generated(target);
  const TargetLabels labels = labels_from(target);

  const InversionResult single = invert_single(img, labels, params, lcfg, w_mean, perceptual, cfg);
  const PairedInversionResult paired =
      invert_paired(img, labels, img, labels, params, lcfg, w_mean, perceptual, cfg);

  const double single_loss = single.trace.steps.back().best_so_far;
  const double paired_half = paired.trace_first.steps.back().best_so_far / 2.0;
  CHECK(paired_half <= single_loss * 1.05);
  CHECK(single_loss <= paired_half * 1.05);
}
