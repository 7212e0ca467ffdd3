#include "vera/anonymize.hpp"
#include "vera/metrics.hpp"
#include "vera/rng.hpp"

#include "doctest.h"

#include <cmath>

using namespace vera;

namespace {

// Small 13-component setup so the regular mode's face-exterior subset is
// exercised with the real layout.
struct Fixture {
  LatentConfig lcfg;
  GeneratorConfig gcfg;
  GeneratorParams params;
  MappingParams mapping;
  ExtendedLatent w_mean;
  SemanticLayout layout = SemanticLayout::celebamask13();
  PyramidPerceptual perceptual;
  DiffusionInpainter inpainting{40};
  IdentityRestoration restoration;
  AnonymizerModels models;

  Fixture()
      : lcfg(make_latent()),
        gcfg(make_generator()),
        params(GeneratorParams::init(11, gcfg, lcfg)),
        mapping(MappingParams::init(12, lcfg)) {
    w_mean = estimate_w_mean(13, 48, mapping, lcfg);
    models.generator = &params;
    models.mapping = &mapping;
    models.latent = lcfg;
    models.layout = layout;
    models.w_mean = w_mean;
    models.inversion.steps = 25;  // structural tests do not need converged inversions
    models.blend = BlendConfig{1.5, 7, 0.3};
    models.perceptual = &perceptual;
    models.inpainting = &inpainting;
    models.restoration = &restoration;
  }

  static LatentConfig make_latent() {
    LatentConfig cfg;
    cfg.d_identity = cfg.d_expression = cfg.d_pose = cfg.d_age = 4;
    cfg.d_free = 6;
    cfg.d_local = 4;
    cfg.components = 13;
    return cfg;
  }
  static GeneratorConfig make_generator() {
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

  std::pair<Image, TargetLabels> synthetic_input(std::uint64_t seed) const {
    const GeneratedOutput out = generate(map_to_w(sample_latent(seed, lcfg), mapping, lcfg), params);
    return {image_from_generated(out), argmax_labels(out)};
  }
};

}  // namespace

TEST_CASE("randomize_components") {
  const Fixture f;
  const ExtendedLatent w = map_to_w(sample_latent(21, f.lcfg), f.mapping, f.lcfg);

  SUBCASE("preserving every component is the identity") {
    std::set<std::string> all(f.layout.names().begin(), f.layout.names().end());
    const ExtendedLatent out = randomize_components(w, all, 5, f.mapping, f.lcfg, f.layout);
    CHECK(flatten(out) == flatten(w));
  }
  SUBCASE("empty preserve set randomizes every local code, globals untouched") {
    const ExtendedLatent out = randomize_components(w, {}, 5, f.mapping, f.lcfg, f.layout);
    CHECK(out.w_global == w.w_global);
    for (int k = 0; k < f.lcfg.components; ++k) {
      REQUIRE(out.w_structure[static_cast<std::size_t>(k)] != w.w_structure[static_cast<std::size_t>(k)]);
      REQUIRE(out.w_texture[static_cast<std::size_t>(k)] != w.w_texture[static_cast<std::size_t>(k)]);
    }
  }
  SUBCASE("deterministic per seed and independent per component") {
    const ExtendedLatent a = randomize_components(w, {"mouth"}, 5, f.mapping, f.lcfg, f.layout);
    const ExtendedLatent b = randomize_components(w, {"mouth"}, 5, f.mapping, f.lcfg, f.layout);
    CHECK(flatten(a) == flatten(b));
    // A different preserve set must not change the other components' draws.
    const ExtendedLatent c = randomize_components(w, {"mouth", "nose"}, 5, f.mapping, f.lcfg, f.layout);
    const int eyes = f.layout.index_of("eyes");
    CHECK(a.w_structure[static_cast<std::size_t>(eyes)] ==
          c.w_structure[static_cast<std::size_t>(eyes)]);
  }
  SUBCASE("unknown component rejected") {
    CHECK_THROWS_AS(randomize_components(w, {"wings"}, 5, f.mapping, f.lcfg, f.layout),
                    ArgumentError);
  }
}

TEST_CASE("request validation") {
  const Fixture f;
  AnonymizationRequest req;
  req.mode = AnonMode::Clinical;
  CHECK_THROWS_AS(req.validate(f.layout), ArgumentError);  // clinical needs preserve
  req.preserve = {"mouth"};
  req.validate(f.layout);
  req.mode = AnonMode::Regular;
  CHECK_THROWS_AS(req.validate(f.layout), ArgumentError);  // regular forbids explicit preserve
  req.preserve.clear();
  req.validate(f.layout);
  CHECK(req.preserve_names(f.layout) ==
        std::vector<std::string>{"background", "ears", "earrings", "neck", "clothes", "hair", "hats"});
}

TEST_CASE("clinical single anonymization preserves the component bit-exactly") {
  const Fixture f;
  const auto [image, labels] = f.synthetic_input(31);

  AnonymizationRequest req;
  req.mode = AnonMode::Clinical;
  req.arity = AnonArity::Single;
  req.preserve = {"mouth"};
  req.rng_seed = 77;

  const AnonymizationResult res = anonymize_single(image, labels, req, f.models);
  REQUIRE(res.outputs.size() == 1);
  REQUIRE(res.mask_real.size() == 1);

  const int mouth = f.layout.index_of("mouth");
  const MaskImage mouth_mask = component_mask(labels, {mouth});
  REQUIRE((mouth_mask != res.mask_real[0]).count() == 0);

  if ((mouth_mask != 0).count() > 0) {
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        if (mouth_mask(y, x) != 0)
          REQUIRE(res.outputs[0].data.row(y * image.width + x) ==
                  image.data.row(y * image.width + x));
    CHECK(region_l1(image, res.outputs[0], mouth_mask) == 0.0);
    CHECK(mask_iou(mouth_mask, res.mask_real[0]) == 1.0);
  }

  // The identity slot of the anonymized latent was resampled.
  CHECK(res.anonymized[0].slot_copy(AttributeSlot::Identity, f.lcfg) !=
        res.recovered[0].slot_copy(AttributeSlot::Identity, f.lcfg));
  // Pose carried over unchanged from the inversion (not resampled).
  CHECK(res.anonymized[0].slot_copy(AttributeSlot::Pose, f.lcfg) ==
        res.recovered[0].slot_copy(AttributeSlot::Pose, f.lcfg));
}

TEST_CASE("regular single anonymization preserves the face exterior") {
  const Fixture f;
  const auto [image, labels] = f.synthetic_input(41);

  AnonymizationRequest req;
  req.mode = AnonMode::Regular;
  req.arity = AnonArity::Single;
  req.rng_seed = 78;

  const AnonymizationResult res = anonymize_single(image, labels, req, f.models);
  const MaskImage exterior = component_mask(labels, f.layout.face_exterior_indices());
  REQUIRE((exterior != res.mask_real[0]).count() == 0);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      if (exterior(y, x) != 0)
        REQUIRE(res.outputs[0].data.row(y * image.width + x) == image.data.row(y * image.width + x));

  // Determinism of the whole pipeline per seed.
  const AnonymizationResult res2 = anonymize_single(image, labels, req, f.models);
  CHECK(res.outputs[0].data == res2.outputs[0].data);
  CHECK(flatten(res.anonymized[0]) == flatten(res2.anonymized[0]));
}

TEST_CASE("empty preserved mask proceeds without fusion and warns") {
  const Fixture f;
  auto [image, labels] = f.synthetic_input(51);
  const int hats = f.layout.index_of("hats");
  for (Eigen::Index p = 0; p < labels.labels.size(); ++p)
    if (labels.labels[p] == hats) labels.labels[p] = 0;  // erase any hat pixels

  AnonymizationRequest req;
  req.mode = AnonMode::Clinical;
  req.arity = AnonArity::Single;
  req.preserve = {"hats"};
  req.rng_seed = 79;

  const AnonymizationResult res = anonymize_single(image, labels, req, f.models);
  CHECK(!res.report.warnings.empty());
  CHECK((res.mask_real[0] != 0).count() == 0);
  CHECK((res.mask_inp[0] != 0).count() == 0);
}

TEST_CASE("paired anonymization shares identity and randomization across the pair") {
  const Fixture f;
  // A synthetic before/after pair: same identity, different expression/pose.
  const LatentSample za = sample_latent(61, f.lcfg);
  LatentSample zb = za;
  zb.global.slot(AttributeSlot::Expression) =
      sample_latent(62, f.lcfg).global.slot(AttributeSlot::Expression);
  const GeneratedOutput ga = generate(map_to_w(za, f.mapping, f.lcfg), f.params);
  const GeneratedOutput gb = generate(map_to_w(zb, f.mapping, f.lcfg), f.params);

  AnonymizationRequest req;
  req.mode = AnonMode::Regular;
  req.arity = AnonArity::Paired;
  req.rng_seed = 80;

  const AnonymizationResult res =
      anonymize_paired(image_from_generated(ga), argmax_labels(ga), image_from_generated(gb),
                       argmax_labels(gb), req, f.models);
  REQUIRE(res.outputs.size() == 2);
  REQUIRE(res.anonymized.size() == 2);

  CHECK(res.anonymized[0].slot_copy(AttributeSlot::Identity, f.lcfg) ==
        res.anonymized[1].slot_copy(AttributeSlot::Identity, f.lcfg));
  // Joint semantic modification: randomized codes bit-equal across the pair.
  for (int k = 0; k < f.lcfg.components; ++k) {
    if (f.layout.is_face_exterior(k)) continue;  // preserved components stay per-image
    REQUIRE(res.anonymized[0].w_structure[static_cast<std::size_t>(k)] ==
            res.anonymized[1].w_structure[static_cast<std::size_t>(k)]);
    REQUIRE(res.anonymized[0].w_texture[static_cast<std::size_t>(k)] ==
            res.anonymized[1].w_texture[static_cast<std::size_t>(k)]);
  }
  // Preserved components come from each image's own inversion.
  const int hair = f.layout.index_of("hair");
  CHECK(res.anonymized[0].w_structure[static_cast<std::size_t>(hair)] ==
        res.recovered[0].w_structure[static_cast<std::size_t>(hair)]);
  CHECK(res.anonymized[1].w_structure[static_cast<std::size_t>(hair)] ==
        res.recovered[1].w_structure[static_cast<std::size_t>(hair)]);

  // The new identity differs from the recovered (shared) identity.
  CHECK(res.anonymized[0].slot_copy(AttributeSlot::Identity, f.lcfg) !=
        res.recovered[0].slot_copy(AttributeSlot::Identity, f.lcfg));
}

TEST_CASE("paired outputs are closer than independent single anonymizations") {
  const Fixture f;
  const StubFaceEmbedder embedder(90, f.gcfg.resolution, 16, 0.5, 4);

  double paired_sum = 0.0, single_sum = 0.0;
  const int n_pairs = 3;
  for (int i = 0; i < n_pairs; ++i) {
    const LatentSample za = sample_latent(static_cast<std::uint64_t>(100 + i), f.lcfg);
    LatentSample zb = za;
    zb.global.slot(AttributeSlot::Pose) =
        sample_latent(static_cast<std::uint64_t>(200 + i), f.lcfg).global.slot(AttributeSlot::Pose);
    const GeneratedOutput ga = generate(map_to_w(za, f.mapping, f.lcfg), f.params);
    const GeneratedOutput gb = generate(map_to_w(zb, f.mapping, f.lcfg), f.params);
    const Image ia = image_from_generated(ga), ib = image_from_generated(gb);
    const TargetLabels la = argmax_labels(ga), lb = argmax_labels(gb);

    AnonymizationRequest preq;
    preq.mode = AnonMode::Regular;
    preq.arity = AnonArity::Paired;
    preq.rng_seed = static_cast<std::uint64_t>(300 + i);
    const AnonymizationResult paired = anonymize_paired(ia, la, ib, lb, preq, f.models);
    paired_sum += cosine_distance(embedder.embed(paired.outputs[0]), embedder.embed(paired.outputs[1]));

    AnonymizationRequest sreq;
    sreq.mode = AnonMode::Regular;
    sreq.arity = AnonArity::Single;
    sreq.rng_seed = static_cast<std::uint64_t>(400 + i);
    const AnonymizationResult sa = anonymize_single(ia, la, sreq, f.models);
    sreq.rng_seed = static_cast<std::uint64_t>(500 + i);
    const AnonymizationResult sb = anonymize_single(ib, lb, sreq, f.models);
    single_sum += cosine_distance(embedder.embed(sa.outputs[0]), embedder.embed(sb.outputs[0]));
  }
  CHECK(paired_sum / n_pairs < single_sum / n_pairs);
}
