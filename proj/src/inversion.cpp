#include "vera/inversion.hpp"

#include "vera/optimizer.hpp"

#include <cmath>
#include <limits>

namespace vera {

void InversionConfig::validate() const {
  if (weight_l1 < 0 || weight_l2 < 0 || weight_perceptual < 0 || weight_mean < 0 || weight_seg < 0)
    throw ConfigError("inversion loss weights must be nonnegative");
  if (steps < 1) throw ConfigError("inversion steps must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("inversion learning rate must be positive");
}

double PerceptualMetric::distance_plain(const Mat& a, const Mat& b, int height, int width) const {
  ad::Tape t;
  return t.scalar(distance(t, t.leaf(a), t.leaf(b), height, width));
}

ad::Var PyramidPerceptual::distance(ad::Tape& t, ad::Var a, ad::Var b, int height, int width) const {
  ad::Var acc{};
  int levels = 0;
  int h = height, w = width;
  for (int l = 0; l < levels_; ++l) {
    ad::Var term = t.mean(t.square(t.sub(a, b)));
    acc = acc.valid() ? t.add(acc, term) : term;
    ++levels;
    if (l + 1 < levels_) {
      if (h % 2 != 0 || w % 2 != 0) break;  // pyramid bottom reached early
      a = t.avgpool2(a, h, w);
      b = t.avgpool2(b, h, w);
      h /= 2;
      w /= 2;
    }
  }
  return t.scale(acc, 1.0 / levels);
}

namespace {

void check_labels(const TargetLabels& target, Eigen::Index pixels, int num_classes) {
  if (target.labels.size() != pixels) throw ArgumentError("label map size mismatch");
  for (Eigen::Index p = 0; p < target.labels.size(); ++p) {
    const int v = target.labels[p];
    if (v < 0 || v >= num_classes) throw ArgumentError("label out of range at pixel");
  }
}

}  // namespace

double seg_cross_entropy(const Mat& pred, const TargetLabels& target) {
  check_labels(target, pred.rows(), static_cast<int>(pred.cols()));
  double acc = 0.0;
  for (Eigen::Index p = 0; p < pred.rows(); ++p)
    acc += -std::log(std::max(pred(p, target.labels[p]), 1e-8));
  return acc / static_cast<double>(pred.rows());
}

ad::Var seg_cross_entropy_graph(ad::Tape& t, ad::Var pred, const TargetLabels& target) {
  check_labels(target, t.value(pred).rows(), static_cast<int>(t.value(pred).cols()));
  ad::Var picked = t.gather_cols(pred, target.labels);
  return t.neg(t.mean(t.log(t.clamp_min(picked, 1e-8))));
}

InversionLossVars inversion_loss_graph(ad::Tape& t, const ExtendedLatentVars& w, ad::Var w_flat,
                                       const Mat& w_mean_row, ad::Var target_image,
                                       const TargetLabels& target_labels, const GeneratorVars& g,
                                       const GeneratorParams& params,
                                       const PerceptualMetric& perceptual,
                                       const InversionConfig& cfg) {
  cfg.validate();
  auto [image, semantic] = generate_graph(t, g, w, params);
  ad::Var residual = t.sub(image, target_image);

  InversionLossVars out;
  out.l1 = t.mean(t.abs(residual));
  out.l2 = t.mean(t.square(residual));
  out.perceptual =
      perceptual.distance(t, image, target_image, params.cfg.resolution, params.cfg.resolution);
  // Mean squared deviation per W+ coordinate, anchored at the latent mean.
  out.mean_reg = t.mean(t.square(t.sub(w_flat, t.leaf(w_mean_row))));
  out.seg = seg_cross_entropy_graph(t, semantic, target_labels);

  ad::Var total = t.scale(out.l1, cfg.weight_l1);
  total = t.add(total, t.scale(out.l2, cfg.weight_l2));
  total = t.add(total, t.scale(out.perceptual, cfg.weight_perceptual));
  total = t.add(total, t.scale(out.mean_reg, cfg.weight_mean));
  total = t.add(total, t.scale(out.seg, cfg.weight_seg));
  out.total = total;
  return out;
}

namespace {

LossBreakdown read_terms(const ad::Tape& t, const InversionLossVars& v) {
  LossBreakdown b;
  b.l1 = t.value(v.l1)(0, 0);
  b.l2 = t.value(v.l2)(0, 0);
  b.perceptual = t.value(v.perceptual)(0, 0);
  b.mean_reg = t.value(v.mean_reg)(0, 0);
  b.seg = t.value(v.seg)(0, 0);
  b.total = t.value(v.total)(0, 0);
  return b;
}

}  // namespace

LossBreakdown inversion_loss(const ExtendedLatent& w, const Image& target,
                             const TargetLabels& target_labels, const ExtendedLatent& w_mean,
                             const GeneratorParams& params, const LatentConfig& latent,
                             const PerceptualMetric& perceptual, const InversionConfig& cfg) {
  if (target.height != params.cfg.resolution || target.width != params.cfg.resolution)
    throw ArgumentError("inversion target resolution mismatch");
  ad::Tape t;
  ad::Var w_flat = t.leaf(flatten(w).transpose());
  ExtendedLatentVars wv = split_extended(t, w_flat, latent);
  GeneratorVars gv = lift(t, params);
  InversionLossVars v = inversion_loss_graph(t, wv, w_flat, flatten(w_mean).transpose(),
                                             t.leaf(target.data), target_labels, gv, params,
                                             perceptual, cfg);
  LossBreakdown b = read_terms(t, v);
  if (!std::isfinite(b.total)) {
    throw NumericalError("inversion_loss: non-finite total (l1=" + std::to_string(b.l1) +
                         " l2=" + std::to_string(b.l2) + " perc=" + std::to_string(b.perceptual) +
                         " mean=" + std::to_string(b.mean_reg) + " seg=" + std::to_string(b.seg) +
                         ")");
  }
  return b;
}

InversionResult invert_single(const Image& target, const TargetLabels& target_labels,
                              const GeneratorParams& params, const LatentConfig& latent,
                              const ExtendedLatent& w_mean, const PerceptualMetric& perceptual,
                              const InversionConfig& cfg, std::uint64_t rng_seed) {
  (void)rng_seed;  // initialization is pinned at w_mean
  cfg.validate();
  if (target.height != params.cfg.resolution || target.width != params.cfg.resolution)
    throw ArgumentError("inversion target resolution mismatch");

  const Mat w_mean_row = flatten(w_mean).transpose();
  Mat w = w_mean_row;
  Adam opt({&w}, cfg.learning_rate);

  InversionResult res;
  res.trace.config = cfg;
  Mat best = w;
  double best_loss = std::numeric_limits<double>::infinity();

  for (int step = 0; step <= cfg.steps; ++step) {
    ad::Tape t;
    ad::Var w_flat = t.leaf(w);
    ExtendedLatentVars wv = split_extended(t, w_flat, latent);
    GeneratorVars gv = lift(t, params);
    InversionLossVars v = inversion_loss_graph(t, wv, w_flat, w_mean_row, t.leaf(target.data),
                                               target_labels, gv, params, perceptual, cfg);
    const LossBreakdown terms = read_terms(t, v);
    if (!std::isfinite(terms.total)) {
      res.trace.diverged = res.diverged = true;
      break;
    }
    if (terms.total < best_loss) {
      best_loss = terms.total;
      best = w;
    }
    res.trace.steps.push_back(InversionStep{step, terms, best_loss});
    if (step == cfg.steps) break;  // final iterate evaluated, no further update
    t.backward(v.total);
    opt.step({t.grad(w_flat)});
  }

  res.latent = unflatten(best.row(0).transpose(), latent);
  return res;
}

PairedInversionResult invert_paired(const Image& target_a, const TargetLabels& labels_a,
                                    const Image& target_b, const TargetLabels& labels_b,
                                    const GeneratorParams& params, const LatentConfig& latent,
                                    const ExtendedLatent& w_mean,
                                    const PerceptualMetric& perceptual, const InversionConfig& cfg,
                                    std::uint64_t rng_seed, const PairedStepObserver& observer) {
  (void)rng_seed;
  cfg.validate();
  const int d_id = latent.d_identity;
  if (d_id < 1) throw ArgumentError("paired inversion requires a nonempty identity slot");
  if (latent.slot_offset(AttributeSlot::Identity) != 0)
    throw ConfigError("identity slot must lead the global layout");

  const Mat w_mean_row = flatten(w_mean).transpose();
  const Eigen::Index rest_dim = w_mean_row.cols() - d_id;
  Mat shared = w_mean_row.leftCols(d_id);
  Mat rest_a = w_mean_row.rightCols(rest_dim);
  Mat rest_b = w_mean_row.rightCols(rest_dim);
  Adam opt({&shared, &rest_a, &rest_b}, cfg.learning_rate);

  PairedInversionResult res;
  res.trace_first.config = cfg;
  res.trace_second.config = cfg;
  Mat best_shared = shared, best_a = rest_a, best_b = rest_b;
  double best_loss = std::numeric_limits<double>::infinity();

  auto to_latent = [&](const Mat& sh, const Mat& rest) {
    Mat row(1, w_mean_row.cols());
    row.leftCols(d_id) = sh;
    row.rightCols(rest_dim) = rest;
    return unflatten(row.row(0).transpose(), latent);
  };

  for (int step = 0; step <= cfg.steps; ++step) {
    ad::Tape t;
    ad::Var shared_v = t.leaf(shared);
    ad::Var rest_a_v = t.leaf(rest_a);
    ad::Var rest_b_v = t.leaf(rest_b);
    ad::Var flat_a = t.concat_cols({shared_v, rest_a_v});
    ad::Var flat_b = t.concat_cols({shared_v, rest_b_v});
    GeneratorVars gv = lift(t, params);
    InversionLossVars va =
        inversion_loss_graph(t, split_extended(t, flat_a, latent), flat_a, w_mean_row,
                             t.leaf(target_a.data), labels_a, gv, params, perceptual, cfg);
    InversionLossVars vb =
        inversion_loss_graph(t, split_extended(t, flat_b, latent), flat_b, w_mean_row,
                             t.leaf(target_b.data), labels_b, gv, params, perceptual, cfg);
    ad::Var joint = t.add(va.total, vb.total);

    const LossBreakdown terms_a = read_terms(t, va);
    const LossBreakdown terms_b = read_terms(t, vb);
    const double joint_val = terms_a.total + terms_b.total;
    if (!std::isfinite(joint_val)) {
      res.diverged = res.trace_first.diverged = res.trace_second.diverged = true;
      break;
    }
    if (joint_val < best_loss) {
      best_loss = joint_val;
      best_shared = shared;
      best_a = rest_a;
      best_b = rest_b;
    }
    res.trace_first.steps.push_back(InversionStep{step, terms_a, best_loss});
    res.trace_second.steps.push_back(InversionStep{step, terms_b, best_loss});
    if (observer) observer(step, to_latent(shared, rest_a), to_latent(shared, rest_b));
    if (step == cfg.steps) break;
    t.backward(joint);
    opt.step({t.grad(shared_v), t.grad(rest_a_v), t.grad(rest_b_v)});
  }

  res.shared_identity = best_shared.row(0).transpose();
  res.first = to_latent(best_shared, best_a);
  res.second = to_latent(best_shared, best_b);
  return res;
}

}  // namespace vera
