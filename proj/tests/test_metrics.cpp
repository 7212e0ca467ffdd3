#include "vera/metrics.hpp"
#include "vera/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <complex>

using namespace vera;

namespace {

Image random_image(RandomStream& rng, int h, int w) {
  Image img;
  img.height = h;
  img.width = w;
  img.data = rng.normal_matrix(static_cast<Eigen::Index>(h) * w, 3).array().tanh();
  return img;
}

MaskImage ones(int h, int w) { return MaskImage::Constant(h, w, 1); }

}  // namespace

TEST_CASE("region content metrics") {
  RandomStream rng(1);
  const Image a = random_image(rng, 4, 4);

  SUBCASE("identical images") {
    CHECK(region_l1(a, a, ones(4, 4)) == 0.0);
    CHECK(region_psnr(a, a, ones(4, 4)) == 99.0);
  }
  SUBCASE("constant offset of 10 levels") {
    Image b = a;
    b.data.array() += 10.0 * 2.0 / 255.0;  // 10 levels on the 0..255 scale
    CHECK(region_l1(a, b, ones(4, 4)) == doctest::Approx(10.0).epsilon(1e-9));
    CHECK(region_psnr(a, b, ones(4, 4)) == doctest::Approx(28.130803608679106).epsilon(1e-9));
  }
  SUBCASE("random 4x4 matches a scalar loop oracle") {
    const Image b = random_image(rng, 4, 4);
    MaskImage mask = MaskImage::Zero(4, 4);
    mask(0, 1) = mask(2, 2) = mask(3, 0) = 1;
    double acc = 0.0, sq = 0.0;
    int n = 0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        if (mask(y, x) == 0) continue;
        for (int c = 0; c < 3; ++c) {
          const double av = (a.data(y * 4 + x, c) + 1) * 0.5 * 255;
          const double bv = (b.data(y * 4 + x, c) + 1) * 0.5 * 255;
          acc += std::abs(av - bv);
          sq += (av - bv) * (av - bv);
          ++n;
        }
      }
    CHECK(region_l1(a, b, mask) == doctest::Approx(acc / n).epsilon(1e-12));
    CHECK(region_psnr(a, b, mask) ==
          doctest::Approx(10 * std::log10(255.0 * 255.0 / (sq / n))).epsilon(1e-12));
  }
  SUBCASE("pixels outside the mask never influence the value") {
    Image b = random_image(rng, 4, 4);
    MaskImage mask = MaskImage::Zero(4, 4);
    mask(1, 1) = 1;
    const double base = region_l1(a, b, mask);
    b.data.row(0).setConstant(0.9);  // outside the mask
    CHECK(region_l1(a, b, mask) == base);
  }
  SUBCASE("empty mask rejected") {
    CHECK_THROWS_AS(region_l1(a, a, MaskImage::Zero(4, 4)), DomainError);
  }
}

TEST_CASE("mask IoU") {
  MaskImage a = MaskImage::Zero(4, 4), b = MaskImage::Zero(4, 4);
  SUBCASE("both empty defined as 1") { CHECK(mask_iou(a, b) == 1.0); }
  SUBCASE("identical nonempty is 1") {
    a(1, 1) = a(2, 2) = 1;
    CHECK(mask_iou(a, a) == 1.0);
  }
  SUBCASE("disjoint is 0") {
    a(0, 0) = 1;
    b(3, 3) = 1;
    CHECK(mask_iou(a, b) == 0.0);
  }
  SUBCASE("half containment is 0.5") {
    a(0, 0) = 1;
    b(0, 0) = b(0, 1) = 1;
    CHECK(mask_iou(a, b) == 0.5);
    CHECK(mask_iou(b, a) == 0.5);  // symmetric
  }
}

TEST_CASE("mean landmark offset") {
  std::vector<Eigen::Vector2d> a = {{0, 0}, {1, 2}, {5, 5}};
  SUBCASE("identical points") { CHECK(mean_landmark_offset(a, a) == 0.0); }
  SUBCASE("uniform 3-4-5 shift") {
    std::vector<Eigen::Vector2d> b;
    for (const auto& p : a) b.push_back(p + Eigen::Vector2d(3, 4));
    CHECK(mean_landmark_offset(a, b) == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("random sets match a loop oracle") {
    RandomStream rng(5);
    std::vector<Eigen::Vector2d> p, q;
    double acc = 0.0;
    for (int i = 0; i < 7; ++i) {
      p.emplace_back(rng.normal(), rng.normal());
      q.emplace_back(rng.normal(), rng.normal());
      acc += std::hypot(p.back().x() - q.back().x(), p.back().y() - q.back().y());
    }
    CHECK(mean_landmark_offset(p, q) == doctest::Approx(acc / 7).epsilon(1e-12));
  }
  SUBCASE("count mismatch rejected") {
    std::vector<Eigen::Vector2d> b = {{0, 0}};
    CHECK_THROWS_AS(mean_landmark_offset(a, b), ArgumentError);
  }
}

TEST_CASE("de-identification rate") {
  RandomStream rng(7);
  const StubFaceEmbedder embedder(8, 16, 16, 0.5);
  std::vector<std::pair<Image, Image>> pairs;
  for (int i = 0; i < 6; ++i) {
    const Image img = random_image(rng, 16, 16);
    pairs.emplace_back(img, img);
  }
  SUBCASE("anonymized == source means zero de-id") { CHECK(deid_rate(pairs, embedder) == 0.0); }
  SUBCASE("complement identity: deid + match = 1") {
    std::vector<std::pair<Image, Image>> mixed;
    for (int i = 0; i < 10; ++i)
      mixed.emplace_back(random_image(rng, 16, 16), random_image(rng, 16, 16));
    const double deid = deid_rate(mixed, embedder);
    int matched = 0;
    for (const auto& [s, t] : mixed)
      if (cosine_distance(embedder.embed(s), embedder.embed(t)) <= embedder.match_threshold())
        ++matched;
    CHECK(deid + static_cast<double>(matched) / 10.0 == 1.0);
  }
}

TEST_CASE("pair consistency") {
  RandomStream rng(9);
  const StubFaceEmbedder embedder(10, 16, 16, 0.5);
  std::vector<std::pair<Image, Image>> inputs;
  for (int i = 0; i < 10; ++i)
    inputs.emplace_back(random_image(rng, 16, 16), random_image(rng, 16, 16));

  SUBCASE("anonymized pair equal to input pair has zero delta") {
    const PairConsistency pc = pair_consistency(inputs, inputs, embedder);
    CHECK(pc.mean_distance_delta == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("identical anonymized images re-identify with distance zero") {
    std::vector<std::pair<Image, Image>> anon;
    for (int i = 0; i < 10; ++i) {
      const Image img = random_image(rng, 16, 16);
      anon.emplace_back(img, img);
    }
    const PairConsistency pc = pair_consistency(anon, inputs, embedder);
    CHECK(pc.reid_rate == 1.0);
  }
  SUBCASE("10 synthetic pairs match hand-computed deltas") {
    std::vector<std::pair<Image, Image>> anon;
    for (int i = 0; i < 10; ++i)
      anon.emplace_back(random_image(rng, 16, 16), random_image(rng, 16, 16));
    const PairConsistency pc = pair_consistency(anon, inputs, embedder);
    double delta = 0.0;
    int matched = 0;
    for (int i = 0; i < 10; ++i) {
      const double da = cosine_distance(embedder.embed(anon[static_cast<std::size_t>(i)].first),
                                        embedder.embed(anon[static_cast<std::size_t>(i)].second));
      const double di = cosine_distance(embedder.embed(inputs[static_cast<std::size_t>(i)].first),
                                        embedder.embed(inputs[static_cast<std::size_t>(i)].second));
      delta += da - di;
      if (da <= 0.5) ++matched;
    }
    CHECK(pc.mean_distance_delta == doctest::Approx(delta / 10).epsilon(1e-12));
    CHECK(pc.reid_rate == doctest::Approx(matched / 10.0).epsilon(1e-12));
  }
}

TEST_CASE("frechet distance") {
  SUBCASE("identical summaries give zero") {
    RandomStream rng(11);
    const Mat a = rng.normal_matrix(3, 3);
    GaussianSummary p;
    p.mu = rng.normal_vector(3);
    p.sigma = a * a.transpose() + 0.1 * Mat::Identity(3, 3);
    CHECK(frechet_distance(p, p) == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("1-D unit shift gives exactly 1") {
    GaussianSummary p, q;
    p.mu = Vec::Zero(1);
    q.mu = Vec::Ones(1);
    p.sigma = Mat::Ones(1, 1);
    q.sigma = Mat::Ones(1, 1);
    CHECK(frechet_distance(p, q) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("3-D random PSD cases match the product-eigendecomposition oracle") {
    RandomStream rng(12);
    for (int trial = 0; trial < 10; ++trial) {
      const Mat a = rng.normal_matrix(3, 3), b = rng.normal_matrix(3, 3);
      GaussianSummary p, q;
      p.mu = rng.normal_vector(3);
      q.mu = rng.normal_vector(3);
      p.sigma = a * a.transpose() + 0.1 * Mat::Identity(3, 3);
      q.sigma = b * b.transpose() + 0.1 * Mat::Identity(3, 3);

      // Independent route: eigenvalues of the (diagonalizable) product Sp*Sq.
      Eigen::EigenSolver<Mat> eig(p.sigma * q.sigma);
      double tr_sqrt = 0.0;
      for (Eigen::Index i = 0; i < 3; ++i)
        tr_sqrt += std::sqrt(std::max(0.0, eig.eigenvalues()[i].real()));
      const double oracle =
          (p.mu - q.mu).squaredNorm() + (p.sigma + q.sigma).trace() - 2.0 * tr_sqrt;

      REQUIRE(std::abs(frechet_distance(p, q) - oracle) < 1e-6);
      REQUIRE(std::abs(frechet_distance(p, q) - frechet_distance(q, p)) < 1e-9);
    }
  }
  SUBCASE("non-PSD covariance rejected") {
    GaussianSummary p, q;
    p.mu = q.mu = Vec::Zero(2);
    p.sigma = Mat::Identity(2, 2);
    q.sigma = Mat::Identity(2, 2);
    q.sigma(0, 0) = -1.0;
    CHECK_THROWS_AS(frechet_distance(p, q), DomainError);
  }
  SUBCASE("summary from samples is PSD and unbiased-shaped") {
    RandomStream rng(13);
    std::vector<Vec> samples;
    for (int i = 0; i < 50; ++i) samples.push_back(rng.normal_vector(4));
    const GaussianSummary s = gaussian_summary(samples);
    CHECK(s.sigma.isApprox(s.sigma.transpose(), 1e-12));
    CHECK(frechet_distance(s, s) == doctest::Approx(0.0).epsilon(1e-9));
  }
}
