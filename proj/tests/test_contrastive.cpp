#include "vera/contrastive.hpp"
#include "vera/rng.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>

using namespace vera;

namespace {

std::vector<Vec> random_batch(std::uint64_t seed, int n, int dim) {
  RandomStream rng(seed);
  std::vector<Vec> v;
  for (int i = 0; i < n; ++i) v.push_back(rng.normal_vector(dim));
  return v;
}

LatentConfig train_latent() {
  LatentConfig cfg;
  cfg.d_identity = cfg.d_expression = cfg.d_pose = cfg.d_age = 4;
  cfg.d_free = 4;
  cfg.d_local = 4;
  cfg.components = 2;
  return cfg;
}

GeneratorConfig train_generator() {
  GeneratorConfig cfg;
  cfg.resolution = 16;
  cfg.grid = 4;
  cfg.d_fourier = 8;
  cfg.c_feat = 6;
  cfg.coarse_layers = 1;
  cfg.structure_layers = 1;
  cfg.texture_layers = 1;
  cfg.renderer_channels = {6, 5, 4};
  return cfg;
}

}  // namespace

TEST_CASE("similarity kernel identities") {
  RandomStream rng(1);
  const Vec u = rng.normal_vector(6);
  const double tau = 0.07;
  CHECK(similarity_g(u, u, tau) == doctest::Approx(std::exp(1.0 / tau)).epsilon(1e-12));
  CHECK(similarity_g(u, Vec(-u), tau) == doctest::Approx(std::exp(-1.0 / tau)).epsilon(1e-12));

  Vec a = Vec::Zero(4), b = Vec::Zero(4);
  a[0] = 2.0;
  b[1] = -3.0;
  CHECK(similarity_g(a, b, 1.0) == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(similarity_g(Vec::Zero(4), u.head(4), tau), DomainError);
  CHECK_THROWS_AS(similarity_g(u, u, 0.0), ConfigError);
}

TEST_CASE("mirrored loss: two-element batch is exactly zero") {
  const auto v = random_batch(2, 2, 8);
  CHECK(mirrored_loss(v, {0, 1, AttributeSlot::Age}, 0.07) == 0.0);
  CHECK(mirrored_loss(v, {0, 1, AttributeSlot::Age}, 1.7) == 0.0);
}

TEST_CASE("mirrored loss equals the sum of the two directional losses") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int n = 2 << (seed % 3);  // 2, 4, 8
    const auto v = random_batch(seed, n, 8);
    const double tau = 0.05 + 0.2 * (seed % 5);
    const double mirrored = mirrored_loss(v, {0, 1, AttributeSlot::Pose}, tau);
    const double oracle = directional_infonce(v, 0, 1, tau) + directional_infonce(v, 1, 0, tau);
    REQUIRE(std::abs(mirrored - oracle) < 1e-9);
  }
}

TEST_CASE("mirrored loss matches the frozen N=4 hand evaluation") {
  // v0=(1,0), v1=(0.8,0.6), v2=(-0.6,0.8), v3=(0,-1), tau=1, pair (0,1).
  std::vector<Vec> v(4, Vec(2));
  v[0] << 1, 0;
  v[1] << 0.8, 0.6;
  v[2] << -0.6, 0.8;
  v[3] << 0, -1;
  CHECK(mirrored_loss(v, {0, 1, AttributeSlot::Age}, 1.0) ==
        doctest::Approx(1.0564577238446746).epsilon(1e-12));
}

TEST_CASE("directional InfoNCE") {
  SUBCASE("two-element batch is zero") {
    const auto v = random_batch(9, 2, 5);
    CHECK(directional_infonce(v, 0, 1, 0.07) == 0.0);
  }
  SUBCASE("frozen N=3 hand case") {
    // v0=(1,0), v1=(0,1), v2=(-1,0), tau=0.5: loss = log(1 + e^-2).
    std::vector<Vec> v(3, Vec(2));
    v[0] << 1, 0;
    v[1] << 0, 1;
    v[2] << -1, 0;
    CHECK(directional_infonce(v, 0, 1, 0.5) ==
          doctest::Approx(0.1269280110429726).epsilon(1e-12));
  }
  SUBCASE("dominant positive similarity saturates to zero") {
    // Scaled vectors keep the cosine margin at its extreme: the positive is
    // parallel to the anchor, every negative antiparallel.
    std::vector<Vec> v(4, Vec(2));
    v[0] << 1, 0;
    v[1] << 1e3, 0;
    v[2] << -1e3, 0;
    v[3] << -5e2, 0;
    const double loss = directional_infonce(v, 0, 1, 0.07);
    CHECK(loss > 0.0);
    CHECK(loss < 1e-12);
  }
}

TEST_CASE("loss is invariant to positive rescaling of any single embedding") {
  RandomStream rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = random_batch(static_cast<std::uint64_t>(40 + trial), 6, 8);
    const double base = mirrored_loss(v, {0, 1, AttributeSlot::Age}, 0.07);
    const std::size_t which = rng.bits() % v.size();
    v[which] *= 1e-3 + 1e4 * rng.uniform();
    const double scaled = mirrored_loss(v, {0, 1, AttributeSlot::Age}, 0.07);
    REQUIRE(std::abs(base - scaled) < 1e-9);
  }
}

TEST_CASE("graph and plain loss paths agree") {
  const auto v = random_batch(55, 6, 8);
  ad::Tape t;
  std::vector<ad::Var> vars;
  for (const Vec& x : v) vars.push_back(t.leaf(x.transpose()));
  CHECK(t.scalar(mirrored_loss_graph(t, vars, 1, 4, 0.07)) ==
        doctest::Approx(mirrored_loss(v, {1, 4, AttributeSlot::Age}, 0.07)).epsilon(1e-12));
  CHECK(t.scalar(directional_infonce_graph(t, vars, 2, 3, 0.2)) ==
        doctest::Approx(directional_infonce(v, 2, 3, 0.2)).epsilon(1e-12));
}

TEST_CASE("attribute loss") {
  const LatentConfig lcfg = train_latent();
  const GeneratorConfig gcfg = train_generator();
  const GeneratorParams params = GeneratorParams::init(60, gcfg, lcfg);
  const MappingParams mapping = MappingParams::init(61, lcfg);
  const StubEncoder encoder(62, gcfg.resolution, 12);
  const ProjectionHead head = ProjectionHead::init(63, encoder.dim(), 16, 16);
  ContrastiveConfig ccfg;

  const ContrastiveBatch batch =
      make_contrastive_batch(64, 4, {AttributeSlot::Pose, AttributeSlot::Age}, lcfg);
  std::vector<GeneratedOutput> images;
  for (const auto& z : batch.latents) images.push_back(generate(map_to_w(z, mapping, lcfg), params));

  SUBCASE("zero pairs for a slot reports a flag and zero loss") {
    const auto res = attribute_loss(batch, images, AttributeSlot::Identity, encoder, head, ccfg);
    CHECK(res.value == 0.0);
    CHECK(!res.has_pairs);
  }

  SUBCASE("mirroring toggle decomposes into directional anchors") {
    ContrastiveConfig on = ccfg, off = ccfg;
    off.mirroring = false;
    const double mirrored =
        attribute_loss(batch, images, AttributeSlot::Pose, encoder, head, on).value;

    // Oracle: embeddings recomputed independently, two one-anchor losses.
    std::vector<Vec> v;
    for (const auto& img : images)
      v.push_back(head.forward(encoder.encode_plain(img.image, img.height, img.width)));
    double expected = 0.0;
    for (const auto& p : batch.pairs)
      if (p.slot == AttributeSlot::Pose)
        expected += directional_infonce(v, p.alpha, p.beta, ccfg.tau) +
                    directional_infonce(v, p.beta, p.alpha, ccfg.tau);
    CHECK(mirrored == doctest::Approx(expected).epsilon(1e-9));

    const double one_way =
        attribute_loss(batch, images, AttributeSlot::Pose, encoder, head, off).value;
    double expected_one = 0.0;
    for (const auto& p : batch.pairs)
      if (p.slot == AttributeSlot::Pose) expected_one += directional_infonce(v, p.alpha, p.beta, ccfg.tau);
    CHECK(one_way == doctest::Approx(expected_one).epsilon(1e-9));
  }

  SUBCASE("no-heads ablation bypasses the head") {
    ContrastiveConfig no_heads = ccfg;
    no_heads.use_heads = false;
    std::vector<Vec> v;
    for (const auto& img : images) v.push_back(encoder.encode_plain(img.image, img.height, img.width));
    double expected = 0.0;
    for (const auto& p : batch.pairs)
      if (p.slot == AttributeSlot::Age) expected += mirrored_loss(v, p, ccfg.tau);
    CHECK(attribute_loss(batch, images, AttributeSlot::Age, encoder, head, no_heads).value ==
          doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("attribute loss gradient w.r.t. head parameters matches finite differences") {
  const int n = 4, dim = 8;
  RandomStream rng(70);
  std::vector<Mat> images;
  for (int i = 0; i < n; ++i) images.push_back(rng.normal_matrix(8 * 8, 3) * 0.5);
  const StubEncoder encoder(71, 8, dim, 8);

  ContrastiveBatch batch;
  LatentConfig lcfg = train_latent();
  for (int i = 0; i < n; ++i) batch.latents.push_back(sample_latent(static_cast<std::uint64_t>(i), lcfg));
  batch.pairs.push_back({0, 1, AttributeSlot::Age});
  batch.pairs.push_back({2, 3, AttributeSlot::Age});

  const ProjectionHead head = ProjectionHead::init(72, dim, 6, 6);
  auto build = [&](ad::Tape& t, const std::vector<Mat>& xs) {
    ProjectionHeadVars hv{t.leaf(xs[0]), t.leaf(xs[1]), t.leaf(xs[2]), t.leaf(xs[3])};
    std::vector<ad::Var> imgs;
    for (const Mat& m : images) imgs.push_back(t.leaf(m));
    ContrastiveConfig cfg;
    auto [loss, has] = attribute_loss_graph(t, batch, imgs, 8, 8, AttributeSlot::Age, encoder, &hv, cfg);
    REQUIRE(has);
    return std::make_pair(loss, std::vector<ad::Var>{hv.w1, hv.b1, hv.w2, hv.b2});
  };
  const auto res = test::grad_check(build, {head.w1, head.b1, head.w2, head.b2});
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("training decreases the contrastive loss and freezes encoders") {
  const LatentConfig lcfg = train_latent();
  const GeneratorConfig gcfg = train_generator();
  GeneratorParams params = GeneratorParams::init(80, gcfg, lcfg);
  MappingParams mapping = MappingParams::init(81, lcfg);
  Discriminator disc = Discriminator::init(82, gcfg.resolution);

  std::map<AttributeSlot, ProjectionHead> heads;
  std::map<AttributeSlot, const AttributeEncoder*> encoders;
  std::vector<std::unique_ptr<StubEncoder>> owned;
  TrainConfig tcfg;
  tcfg.slots = {AttributeSlot::Pose, AttributeSlot::Age};
  tcfg.batch = 4;
  tcfg.learning_rate = 2e-3;
  for (AttributeSlot slot : tcfg.slots) {
    owned.push_back(std::make_unique<StubEncoder>(derive_seed(83, to_string(slot)), gcfg.resolution, 12));
    encoders[slot] = owned.back().get();
    heads[slot] = ProjectionHead::init(derive_seed(84, to_string(slot)), 12, 16, 16);
  }

  // Frozen "real" images from a differently seeded teacher generator.
  const GeneratorParams teacher = GeneratorParams::init(99, gcfg, lcfg);
  std::vector<Mat> reals;
  for (int i = 0; i < 4; ++i)
    reals.push_back(
        generate(map_to_w(sample_latent(static_cast<std::uint64_t>(200 + i), lcfg), mapping, lcfg), teacher)
            .image);

  std::vector<std::uint64_t> encoder_hashes;
  for (AttributeSlot slot : tcfg.slots) encoder_hashes.push_back(encoders[slot]->state_hash());

  Trainer trainer(params, mapping, heads, encoders, disc, lcfg, tcfg);
  double first = 0.0, last = 0.0;
  const int steps = 40;
  for (int s = 0; s < steps; ++s) {
    const StepReport rep = trainer.step(derive_seed(85, "step", static_cast<std::uint64_t>(s)), reals);
    REQUIRE(rep.applied);
    if (s == 0) first = rep.per_anchor_contrastive;
    if (s == steps - 1) last = rep.per_anchor_contrastive;
  }
  CHECK(last < first);

  std::size_t i = 0;
  for (AttributeSlot slot : tcfg.slots) REQUIRE(encoders[slot]->state_hash() == encoder_hashes[i++]);
}
