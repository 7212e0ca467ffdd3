#include "vera/metrics.hpp"

#include "vera/rng.hpp"

#include <cmath>

namespace vera {

StubFaceEmbedder::StubFaceEmbedder(std::uint64_t seed, int input_resolution, int embed_dim,
                                   double threshold, int pooled)
    : pooled_(pooled), threshold_(threshold) {
  if (input_resolution < pooled || input_resolution % pooled != 0)
    throw ConfigError("stub embedder: resolution must reduce to the pool size");
  RandomStream rng(seed);
  const int in = 3 * pooled * pooled;
  weight_ = rng.normal_matrix(in, embed_dim) * (1.0 / std::sqrt(static_cast<double>(in)));
  bias_ = rng.normal_matrix(1, embed_dim) * 0.01;
}

Vec StubFaceEmbedder::embed(const Image& image) const {
  if (image.height != image.width) throw ArgumentError("stub embedder: expects square images");
  Mat x = image.data;
  int r = image.height;
  while (r > pooled_) {
    if (r % 2 != 0) throw ArgumentError("stub embedder: resolution must halve to pool size");
    const int r2 = r / 2;
    Mat y(static_cast<Eigen::Index>(r2) * r2, x.cols());
    for (int yy = 0; yy < r2; ++yy)
      for (int xx = 0; xx < r2; ++xx)
        y.row(yy * r2 + xx) = 0.25 * (x.row((2 * yy) * r + 2 * xx) + x.row((2 * yy) * r + 2 * xx + 1) +
                                      x.row((2 * yy + 1) * r + 2 * xx) +
                                      x.row((2 * yy + 1) * r + 2 * xx + 1));
    x = std::move(y);
    r = r2;
  }
  const Mat flat = x.reshaped(1, x.size());
  return (flat * weight_ + bias_).row(0).transpose();
}

std::vector<Eigen::Vector2d> StubLandmarkDetector::detect(const Image& image) const {
  const int h = image.height, w = image.width;
  const int h2 = h / 2, w2 = w / 2;
  struct Region {
    int y0, y1, x0, x1;
  };
  const Region regions[5] = {{0, h2, 0, w2},
                             {0, h2, w2, w},
                             {h2, h, 0, w2},
                             {h2, h, w2, w},
                             {h / 4, h - h / 4, w / 4, w - w / 4}};
  std::vector<Eigen::Vector2d> points;
  for (const Region& r : regions) {
    double wsum = 0.0, xs = 0.0, ys = 0.0;
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) {
        // Intensity in [0,2] so weights stay positive.
        const double v = image.data.row(y * w + x).mean() + 1.0;
        wsum += v;
        xs += v * x;
        ys += v * y;
      }
    points.emplace_back(wsum > 0 ? xs / wsum : 0.0, wsum > 0 ? ys / wsum : 0.0);
  }
  return points;
}

double cosine_distance(const Vec& a, const Vec& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DomainError("cosine_distance: zero-norm embedding");
  return 1.0 - a.dot(b) / (na * nb);
}

namespace {

void check_region_args(const Image& a, const Image& b, const MaskImage& mask) {
  if (a.height != b.height || a.width != b.width)
    throw ArgumentError("region metric: image shapes differ");
  if (mask.rows() != a.height || mask.cols() != a.width)
    throw ArgumentError("region metric: mask shape mismatch");
  if ((mask != 0).count() == 0) throw DomainError("region metric: empty mask");
}

double to_level(double x) { return (x + 1.0) * 0.5 * 255.0; }

}  // namespace

double region_l1(const Image& a, const Image& b, const MaskImage& mask) {
  check_region_args(a, b, mask);
  double acc = 0.0;
  Eigen::Index count = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask(y, x) == 0) continue;
      const Eigen::Index p = static_cast<Eigen::Index>(y) * a.width + x;
      for (int c = 0; c < 3; ++c) acc += std::abs(to_level(a.data(p, c)) - to_level(b.data(p, c)));
      count += 3;
    }
  return acc / static_cast<double>(count);
}

double region_psnr(const Image& a, const Image& b, const MaskImage& mask) {
  check_region_args(a, b, mask);
  double acc = 0.0;
  Eigen::Index count = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask(y, x) == 0) continue;
      const Eigen::Index p = static_cast<Eigen::Index>(y) * a.width + x;
      for (int c = 0; c < 3; ++c) {
        const double d = to_level(a.data(p, c)) - to_level(b.data(p, c));
        acc += d * d;
      }
      count += 3;
    }
  const double mse = acc / static_cast<double>(count);
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double mask_iou(const MaskImage& a, const MaskImage& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ArgumentError("mask_iou: shapes differ");
  const auto inter = ((a != 0) && (b != 0)).count();
  const auto uni = ((a != 0) || (b != 0)).count();
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_landmark_offset(const std::vector<Eigen::Vector2d>& a,
                            const std::vector<Eigen::Vector2d>& b) {
  if (a.size() != b.size()) throw ArgumentError("landmark offset: point counts differ");
  if (a.empty()) throw ArgumentError("landmark offset: no points");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]).norm();
  return acc / static_cast<double>(a.size());
}

double deid_rate(const std::vector<std::pair<Image, Image>>& pairs, const FaceEmbedder& embedder) {
  if (pairs.empty()) throw ArgumentError("deid_rate: no pairs");
  int missed = 0;
  for (const auto& [source, anonymized] : pairs) {
    const double d = cosine_distance(embedder.embed(source), embedder.embed(anonymized));
    if (d > embedder.match_threshold()) ++missed;
  }
  return static_cast<double>(missed) / static_cast<double>(pairs.size());
}

PairConsistency pair_consistency(const std::vector<std::pair<Image, Image>>& anonymized,
                                 const std::vector<std::pair<Image, Image>>& inputs,
                                 const FaceEmbedder& embedder) {
  if (anonymized.size() != inputs.size()) throw ArgumentError("pair_consistency: list mismatch");
  if (anonymized.empty()) throw ArgumentError("pair_consistency: no pairs");
  PairConsistency out;
  int matched = 0;
  double delta = 0.0;
  for (std::size_t i = 0; i < anonymized.size(); ++i) {
    const double d_anon =
        cosine_distance(embedder.embed(anonymized[i].first), embedder.embed(anonymized[i].second));
    const double d_in =
        cosine_distance(embedder.embed(inputs[i].first), embedder.embed(inputs[i].second));
    if (d_anon <= embedder.match_threshold()) ++matched;
    delta += d_anon - d_in;
  }
  out.reid_rate = static_cast<double>(matched) / static_cast<double>(anonymized.size());
  out.mean_distance_delta = delta / static_cast<double>(anonymized.size());
  return out;
}

GaussianSummary gaussian_summary(const std::vector<Vec>& samples) {
  if (samples.size() < 2) throw ArgumentError("gaussian_summary: need at least 2 samples");
  const Eigen::Index d = samples.front().size();
  GaussianSummary s;
  s.mu = Vec::Zero(d);
  for (const Vec& x : samples) s.mu += x;
  s.mu /= static_cast<double>(samples.size());
  s.sigma = Mat::Zero(d, d);
  for (const Vec& x : samples) {
    const Vec c = x - s.mu;
    s.sigma.noalias() += c * c.transpose();
  }
  s.sigma /= static_cast<double>(samples.size() - 1);
  return s;
}

namespace {

// Symmetrize and eigendecompose. strict inputs (the covariances themselves)
// reject eigenvalues below -1e-8; the internal sandwich product only has its
// floating-point negatives clipped.
std::pair<Mat, Vec> psd_eigen(const Mat& sigma, bool strict) {
  const Mat sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericalError("frechet: eigensolver failed");
  Vec lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (strict && lambda[i] < -1e-8)
      throw DomainError("frechet: covariance is not positive semidefinite");
    lambda[i] = std::max(lambda[i], 0.0);
  }
  return {eig.eigenvectors(), lambda};
}

}  // namespace

double frechet_distance(const GaussianSummary& p, const GaussianSummary& q) {
  if (p.mu.size() != q.mu.size() || p.sigma.rows() != q.sigma.rows())
    throw ArgumentError("frechet: dimension mismatch");
  const auto [up, lp] = psd_eigen(p.sigma, /*strict=*/true);
  const auto [uq, lq] = psd_eigen(q.sigma, /*strict=*/true);
  const Mat sqrt_p = up * lp.cwiseSqrt().asDiagonal() * up.transpose();
  const Mat sym_q = uq * lq.asDiagonal() * uq.transpose();
  const Mat sandwich = sqrt_p * sym_q * sqrt_p;
  const auto [um, lm] = psd_eigen(sandwich, /*strict=*/false);
  (void)um;
  const double tr_sqrt = lm.cwiseSqrt().sum();
  const double dist = (p.mu - q.mu).squaredNorm() + p.sigma.trace() + q.sigma.trace() - 2.0 * tr_sqrt;
  return std::max(dist, 0.0);
}

}  // namespace vera
