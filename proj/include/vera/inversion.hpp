#pragma once

#include "vera/autodiff.hpp"
#include "vera/common.hpp"
#include "vera/generator.hpp"
#include "vera/image.hpp"
#include "vera/latent.hpp"

#include <functional>
#include <vector>

namespace vera {

/// Published optimization recipe: loss weights l1/l2/perceptual/mean/seg =
/// 1.0/0.1/2.0/1.0/1.0, 300 steps of Adam at learning rate 0.1.
struct InversionConfig {
  double weight_l1 = 1.0;
  double weight_l2 = 0.1;
  double weight_perceptual = 2.0;
  double weight_mean = 1.0;
  double weight_seg = 1.0;
  int steps = 300;
  double learning_rate = 0.1;

  void validate() const;
};

/// Per-pixel semantic labels over a SemanticLayout, values in 0..K-1.
struct TargetLabels {
  int height = 0;
  int width = 0;
  Eigen::VectorXi labels;  // length H*W, pixel p = y*W + x
};

/// Differentiable image distance; symmetric, zero at identical inputs.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual ad::Var distance(ad::Tape& t, ad::Var a, ad::Var b, int height, int width) const = 0;
  double distance_plain(const Mat& a, const Mat& b, int height, int width) const;
};

/// Multi-scale mean-squared distance over an average-pooling pyramid. The
/// desk-scale stand-in behind the perceptual slot; a learned LPIPS-style
/// metric plugs in through the same interface.
class PyramidPerceptual final : public PerceptualMetric {
 public:
  explicit PyramidPerceptual(int levels = 3) : levels_(levels) {}
  ad::Var distance(ad::Tape& t, ad::Var a, ad::Var b, int height, int width) const override;

 private:
  int levels_;
};

/// Mean over pixels of -log(max(pred[p, target[p]], 1e-8)).
double seg_cross_entropy(const Mat& pred, const TargetLabels& target);
ad::Var seg_cross_entropy_graph(ad::Tape& t, ad::Var pred, const TargetLabels& target);

struct LossBreakdown {
  double l1 = 0, l2 = 0, perceptual = 0, mean_reg = 0, seg = 0, total = 0;
};

struct InversionLossVars {
  ad::Var l1, l2, perceptual, mean_reg, seg, total;
};

/// Weighted sum of pixel l1/l2, perceptual distance, mean regularization of
/// the flat latent (mean squared deviation per coordinate) and semantic
/// cross-entropy, with img = generate(w).
InversionLossVars inversion_loss_graph(ad::Tape& t, const ExtendedLatentVars& w, ad::Var w_flat,
                                       const Mat& w_mean_row, ad::Var target_image,
                                       const TargetLabels& target_labels, const GeneratorVars& g,
                                       const GeneratorParams& params,
                                       const PerceptualMetric& perceptual,
                                       const InversionConfig& cfg);

LossBreakdown inversion_loss(const ExtendedLatent& w, const Image& target,
                             const TargetLabels& target_labels, const ExtendedLatent& w_mean,
                             const GeneratorParams& params, const LatentConfig& latent,
                             const PerceptualMetric& perceptual, const InversionConfig& cfg);

struct InversionStep {
  int step = 0;
  LossBreakdown terms;
  double best_so_far = 0;
};

struct InversionTrace {
  InversionConfig config;  // echoed so the run recipe is part of the record
  std::vector<InversionStep> steps;
  bool diverged = false;
};

struct InversionResult {
  ExtendedLatent latent;  // best-loss iterate
  InversionTrace trace;
  bool diverged = false;
};

/// Projects a real image into W+ by first-order optimization, starting at
/// w_mean, with the generator frozen. rng_seed is reserved for stochastic
/// variants; the default procedure is deterministic.
InversionResult invert_single(const Image& target, const TargetLabels& target_labels,
                              const GeneratorParams& params, const LatentConfig& latent,
                              const ExtendedLatent& w_mean, const PerceptualMetric& perceptual,
                              const InversionConfig& cfg, std::uint64_t rng_seed = 0);

struct PairedInversionResult {
  Vec shared_identity;
  ExtendedLatent first;
  ExtendedLatent second;
  InversionTrace trace_first;   // per-image loss terms
  InversionTrace trace_second;
  bool diverged = false;
};

using PairedStepObserver =
    std::function<void(int step, const ExtendedLatent& a, const ExtendedLatent& b)>;

/// Joint inversion of two images of the same person: one shared identity-slot
/// variable, everything else per-image; the objective is the sum of the two
/// single-image losses under the same configuration.
PairedInversionResult invert_paired(const Image& target_a, const TargetLabels& labels_a,
                                    const Image& target_b, const TargetLabels& labels_b,
                                    const GeneratorParams& params, const LatentConfig& latent,
                                    const ExtendedLatent& w_mean,
                                    const PerceptualMetric& perceptual, const InversionConfig& cfg,
                                    std::uint64_t rng_seed = 0,
                                    const PairedStepObserver& observer = nullptr);

}  // namespace vera
