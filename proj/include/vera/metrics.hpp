#pragma once

#include "vera/common.hpp"
#include "vera/image.hpp"

#include <utility>
#include <vector>

namespace vera {

/// Frozen face-recognition embedding with a cosine-distance match threshold.
class FaceEmbedder {
 public:
  virtual ~FaceEmbedder() = default;
  virtual Vec embed(const Image& image) const = 0;
  virtual double match_threshold() const = 0;
};

/// Seeded random linear projection of pooled pixels; desk-scale stand-in for
/// the recognition backends.
class StubFaceEmbedder final : public FaceEmbedder {
 public:
  StubFaceEmbedder(std::uint64_t seed, int input_resolution, int embed_dim = 32,
                   double threshold = 0.5, int pooled = 8);
  Vec embed(const Image& image) const override;
  double match_threshold() const override { return threshold_; }

 private:
  int pooled_;
  double threshold_;
  Mat weight_;
  Mat bias_;
};

class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  virtual std::vector<Eigen::Vector2d> detect(const Image& image) const = 0;
};

/// Five deterministic pseudo-landmarks: intensity-weighted centroids of fixed
/// image regions (quadrants plus center).
class StubLandmarkDetector final : public LandmarkDetector {
 public:
  std::vector<Eigen::Vector2d> detect(const Image& image) const override;
};

/// 1 - cosine similarity.
double cosine_distance(const Vec& a, const Vec& b);

// ---- region content metrics (0..255 scale) ----

double region_l1(const Image& a, const Image& b, const MaskImage& mask);
/// 10*log10(255^2 / masked MSE), capped at 99 dB for exact matches.
double region_psnr(const Image& a, const Image& b, const MaskImage& mask);

double mask_iou(const MaskImage& a, const MaskImage& b);

double mean_landmark_offset(const std::vector<Eigen::Vector2d>& a,
                            const std::vector<Eigen::Vector2d>& b);

// ---- identity metrics ----

/// Fraction of (source, anonymized) pairs the embedder fails to match, i.e.
/// cosine distance above the threshold.
double deid_rate(const std::vector<std::pair<Image, Image>>& pairs, const FaceEmbedder& embedder);

struct PairConsistency {
  double reid_rate = 0.0;       // anonymized pairs still matched to each other
  double mean_distance_delta = 0.0;  // dist(anon pair) - dist(input pair), averaged
};

PairConsistency pair_consistency(const std::vector<std::pair<Image, Image>>& anonymized,
                                 const std::vector<std::pair<Image, Image>>& inputs,
                                 const FaceEmbedder& embedder);

// ---- distribution distance ----

struct GaussianSummary {
  Vec mu;
  Mat sigma;  // symmetric positive semidefinite
};

/// Sample mean and unbiased covariance.
GaussianSummary gaussian_summary(const std::vector<Vec>& samples);

/// |mu_p - mu_q|^2 + tr(Sp + Sq - 2 (Sp Sq)^(1/2)), the matrix square root
/// taken through the symmetric sandwich Sp^(1/2) Sq Sp^(1/2). Covariances are
/// symmetrized; eigenvalues below -1e-8 raise DomainError, small negatives
/// are clipped to zero.
double frechet_distance(const GaussianSummary& p, const GaussianSummary& q);

}  // namespace vera
