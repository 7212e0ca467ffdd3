#include "vera/contrastive.hpp"

#include "vera/rng.hpp"

#include <cmath>

namespace vera {

double similarity_g(const Vec& u, const Vec& v, double tau) {
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  const double nu = std::sqrt(u.dot(u)), nv = std::sqrt(v.dot(v));
  if (nu == 0.0 || nv == 0.0) throw DomainError("similarity_g: zero-norm input");
  const double c = u.dot(v) / (nu * nv);
  return std::exp(c / tau);
}

ad::Var similarity_g_graph(ad::Tape& t, ad::Var u, ad::Var v, double tau) {
  if (!(tau > 0)) throw ConfigError("tau must be positive");
  return t.exp(t.scale(ad::cosine(t, u, v), 1.0 / tau));
}

double mirrored_loss(const std::vector<Vec>& batch, const ContrastivePair& pair, double tau) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw ArgumentError("mirrored_loss: batch must have at least 2 vectors");
  const int a = pair.alpha, b = pair.beta;
  if (a == b || a < 0 || b < 0 || a >= n || b >= n)
    throw ArgumentError("mirrored_loss: bad pair indices");
  const double gab = similarity_g(batch[static_cast<std::size_t>(a)],
                                  batch[static_cast<std::size_t>(b)], tau);
  double sum_a = 0.0, sum_b = 0.0;
  for (int c = 0; c < n; ++c) {
    if (c != a)
      sum_a += similarity_g(batch[static_cast<std::size_t>(a)], batch[static_cast<std::size_t>(c)], tau);
    if (c != b)
      sum_b += similarity_g(batch[static_cast<std::size_t>(b)], batch[static_cast<std::size_t>(c)], tau);
  }
  return -std::log((gab * gab) / (sum_a * sum_b));
}

ad::Var mirrored_loss_graph(ad::Tape& t, const std::vector<ad::Var>& batch, int alpha, int beta,
                            double tau) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw ArgumentError("mirrored_loss: batch must have at least 2 vectors");
  if (alpha == beta || alpha < 0 || beta < 0 || alpha >= n || beta >= n)
    throw ArgumentError("mirrored_loss: bad pair indices");
  ad::Var gab = similarity_g_graph(t, batch[static_cast<std::size_t>(alpha)],
                                   batch[static_cast<std::size_t>(beta)], tau);
  ad::Var sum_a{}, sum_b{};
  for (int c = 0; c < n; ++c) {
    if (c != alpha) {
      ad::Var g = similarity_g_graph(t, batch[static_cast<std::size_t>(alpha)],
                                     batch[static_cast<std::size_t>(c)], tau);
      sum_a = sum_a.valid() ? t.add(sum_a, g) : g;
    }
    if (c != beta) {
      ad::Var g = similarity_g_graph(t, batch[static_cast<std::size_t>(beta)],
                                     batch[static_cast<std::size_t>(c)], tau);
      sum_b = sum_b.valid() ? t.add(sum_b, g) : g;
    }
  }
  ad::Var ratio = t.div(t.mul(gab, gab), t.mul(sum_a, sum_b));
  return t.neg(t.log(ratio));
}

double directional_infonce(const std::vector<Vec>& batch, int anchor, int positive, double tau) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw ArgumentError("directional_infonce: batch must have at least 2 vectors");
  if (anchor == positive || anchor < 0 || positive < 0 || anchor >= n || positive >= n)
    throw ArgumentError("directional_infonce: bad indices");
  const double gp = similarity_g(batch[static_cast<std::size_t>(anchor)],
                                 batch[static_cast<std::size_t>(positive)], tau);
  double den = 0.0;
  for (int c = 0; c < n; ++c)
    if (c != anchor)
      den += similarity_g(batch[static_cast<std::size_t>(anchor)], batch[static_cast<std::size_t>(c)],
                          tau);
  return -std::log(gp / den);
}

ad::Var directional_infonce_graph(ad::Tape& t, const std::vector<ad::Var>& batch, int anchor,
                                  int positive, double tau) {
  const int n = static_cast<int>(batch.size());
  if (n < 2) throw ArgumentError("directional_infonce: batch must have at least 2 vectors");
  if (anchor == positive || anchor < 0 || positive < 0 || anchor >= n || positive >= n)
    throw ArgumentError("directional_infonce: bad indices");
  ad::Var gp = similarity_g_graph(t, batch[static_cast<std::size_t>(anchor)],
                                  batch[static_cast<std::size_t>(positive)], tau);
  ad::Var den{};
  for (int c = 0; c < n; ++c) {
    if (c == anchor) continue;
    ad::Var g = similarity_g_graph(t, batch[static_cast<std::size_t>(anchor)],
                                   batch[static_cast<std::size_t>(c)], tau);
    den = den.valid() ? t.add(den, g) : g;
  }
  return t.neg(t.log(t.div(gp, den)));
}

// ---- encoders and heads ----

Vec AttributeEncoder::encode_plain(const Mat& image, int height, int width) const {
  ad::Tape t;
  ad::Var v = encode(t, t.leaf(image), height, width);
  return t.value(v).row(0).transpose();
}

StubEncoder::StubEncoder(std::uint64_t seed, int input_resolution, int embed_dim, int pooled)
    : pooled_(pooled) {
  if (input_resolution < pooled || input_resolution % pooled != 0)
    throw ConfigError("stub encoder: resolution must be a power-of-two multiple of pool size");
  int r = input_resolution;
  while (r > pooled) {
    if (r % 2 != 0) throw ConfigError("stub encoder: resolution must halve down to pool size");
    r /= 2;
  }
  RandomStream rng(seed);
  const int in = 3 * pooled * pooled;
  weight_ = rng.normal_matrix(in, embed_dim) * (1.0 / std::sqrt(static_cast<double>(in)));
  bias_ = rng.normal_matrix(1, embed_dim) * 0.01;
}

ad::Var StubEncoder::encode(ad::Tape& t, ad::Var image, int height, int width) const {
  if (height != width) throw ArgumentError("stub encoder: expects square images");
  ad::Var x = image;
  int r = height;
  while (r > pooled_) {
    x = t.avgpool2(x, r, r);
    r /= 2;
  }
  ad::Var flat = t.reshape(x, 1, static_cast<Eigen::Index>(3) * pooled_ * pooled_);
  return ad::linear(t, flat, t.leaf(weight_), t.leaf(bias_));
}

std::uint64_t StubEncoder::state_hash() const {
  std::uint64_t h = fnv1a(weight_);
  h = fnv1a(bias_, h);
  return fnv1a(&pooled_, sizeof(pooled_), h);
}

ProjectionHead ProjectionHead::init(std::uint64_t seed, int in, int hidden, int out) {
  RandomStream rng(seed);
  ProjectionHead h;
  h.w1 = rng.normal_matrix(in, hidden) * (1.0 / std::sqrt(static_cast<double>(in)));
  h.b1 = Mat::Zero(1, hidden);
  h.w2 = rng.normal_matrix(hidden, out) * (1.0 / std::sqrt(static_cast<double>(hidden)));
  h.b2 = Mat::Zero(1, out);
  return h;
}

Vec ProjectionHead::forward(const Vec& x) const {
  const Vec h = ((w1.transpose() * x + b1.row(0).transpose()).array().tanh()).matrix();
  return w2.transpose() * h + b2.row(0).transpose();
}

void ProjectionHead::visit(const std::string& prefix,
                           const std::function<void(const std::string&, Mat&)>& fn) {
  fn(prefix + ".w1", w1);
  fn(prefix + ".b1", b1);
  fn(prefix + ".w2", w2);
  fn(prefix + ".b2", b2);
}

ProjectionHeadVars lift(ad::Tape& t, const ProjectionHead& head) {
  return ProjectionHeadVars{t.leaf(head.w1), t.leaf(head.b1), t.leaf(head.w2), t.leaf(head.b2)};
}

ad::Var head_forward(ad::Tape& t, ad::Var x, const ProjectionHeadVars& head) {
  ad::Var h = t.tanh(ad::linear(t, x, head.w1, head.b1));
  return ad::linear(t, h, head.w2, head.b2);
}

// ---- attribute loss ----

std::pair<ad::Var, bool> attribute_loss_graph(ad::Tape& t, const ContrastiveBatch& batch,
                                              const std::vector<ad::Var>& images, int height,
                                              int width, AttributeSlot slot,
                                              const AttributeEncoder& encoder,
                                              const ProjectionHeadVars* head,
                                              const ContrastiveConfig& cfg) {
  cfg.validate();
  if (images.size() != batch.latents.size())
    throw ArgumentError("attribute_loss: image count != batch size");

  bool any = false;
  for (const ContrastivePair& p : batch.pairs) any = any || p.slot == slot;
  if (!any) return {t.leaf(Mat::Zero(1, 1)), false};

  std::vector<ad::Var> v;
  v.reserve(images.size());
  for (ad::Var img : images) {
    ad::Var e = encoder.encode(t, img, height, width);
    v.push_back(cfg.use_heads && head ? head_forward(t, e, *head) : e);
  }

  ad::Var loss{};
  for (const ContrastivePair& p : batch.pairs) {
    if (p.slot != slot) continue;
    ad::Var term = cfg.mirroring ? mirrored_loss_graph(t, v, p.alpha, p.beta, cfg.tau)
                                 : directional_infonce_graph(t, v, p.alpha, p.beta, cfg.tau);
    loss = loss.valid() ? t.add(loss, term) : term;
  }
  return {loss, true};
}

AttributeLossResult attribute_loss(const ContrastiveBatch& batch,
                                   const std::vector<GeneratedOutput>& images, AttributeSlot slot,
                                   const AttributeEncoder& encoder, const ProjectionHead& head,
                                   const ContrastiveConfig& cfg) {
  ad::Tape t;
  std::vector<ad::Var> imgs;
  int height = 0, width = 0;
  for (const GeneratedOutput& g : images) {
    imgs.push_back(t.leaf(g.image));
    height = g.height;
    width = g.width;
  }
  ProjectionHeadVars hv = lift(t, head);
  auto [loss, has_pairs] = attribute_loss_graph(t, batch, imgs, height, width, slot, encoder, &hv, cfg);
  return AttributeLossResult{t.scalar(loss), has_pairs};
}

// ---- discriminator ----

Discriminator Discriminator::init(std::uint64_t seed, int resolution, int base_channels) {
  if (resolution < 8) throw ConfigError("discriminator: resolution too small");
  RandomStream rng(seed);
  Discriminator d;
  d.resolution = resolution;
  int cin = 3;
  int c = base_channels;
  for (int stage = 0; stage < 3; ++stage) {
    Conv conv;
    conv.weight = rng.normal_matrix(9 * cin, c) * (1.0 / std::sqrt(9.0 * cin));
    conv.bias = Mat::Zero(1, c);
    d.convs.push_back(std::move(conv));
    cin = c;
    c *= 2;
  }
  d.out_weight = rng.normal_matrix(cin, 1) * (1.0 / std::sqrt(static_cast<double>(cin)));
  d.out_bias = Mat::Zero(1, 1);
  return d;
}

void Discriminator::visit(const std::string& prefix,
                          const std::function<void(const std::string&, Mat&)>& fn) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    fn(prefix + ".conv" + std::to_string(i) + ".weight", convs[i].weight);
    fn(prefix + ".conv" + std::to_string(i) + ".bias", convs[i].bias);
  }
  fn(prefix + ".out.weight", out_weight);
  fn(prefix + ".out.bias", out_bias);
}

DiscriminatorVars lift(ad::Tape& t, const Discriminator& d) {
  DiscriminatorVars v;
  for (const auto& conv : d.convs) v.convs.emplace_back(t.leaf(conv.weight), t.leaf(conv.bias));
  v.out_weight = t.leaf(d.out_weight);
  v.out_bias = t.leaf(d.out_bias);
  return v;
}

ad::Var discriminator_logit(ad::Tape& t, ad::Var image, int resolution,
                            const DiscriminatorVars& d) {
  ad::Var x = image;
  int r = resolution;
  int cin = 3;
  for (const auto& [w, b] : d.convs) {
    x = t.tanh(ad::conv3x3(t, x, w, b, r, r, cin));
    cin = static_cast<int>(t.value(w).cols());
    x = t.avgpool2(x, r, r);
    r /= 2;
  }
  // Global average pool per channel, then the logit head.
  ad::Var pooled = t.scale(t.matmul(t.leaf(Mat::Ones(1, t.value(x).rows())), x),
                           1.0 / static_cast<double>(t.value(x).rows()));
  return ad::linear(t, pooled, d.out_weight, d.out_bias);
}

// ---- trainer ----

Trainer::Trainer(GeneratorParams& generator, MappingParams& mapping,
                 std::map<AttributeSlot, ProjectionHead>& heads,
                 std::map<AttributeSlot, const AttributeEncoder*> encoders, Discriminator& disc,
                 const LatentConfig& latent, const TrainConfig& cfg)
    : generator_(generator),
      mapping_(mapping),
      heads_(heads),
      encoders_(std::move(encoders)),
      disc_(disc),
      latent_(latent),
      cfg_(cfg),
      gen_opt_({}, cfg.learning_rate),
      disc_opt_({}, cfg.disc_learning_rate) {
  cfg_.contrastive.validate();
  for (AttributeSlot slot : cfg_.slots) {
    if (!encoders_.count(slot))
      throw ConfigError(std::string("trainer: missing encoder for slot ") + to_string(slot));
    if (cfg_.contrastive.use_heads && !heads_.count(slot))
      throw ConfigError(std::string("trainer: missing projection head for slot ") + to_string(slot));
  }
  generator_.visit("gen", [this](const std::string&, Mat& m) { gen_params_.push_back(&m); });
  mapping_.visit("map", [this](const std::string&, Mat& m) { gen_params_.push_back(&m); });
  for (auto& [slot, head] : heads_)
    head.visit(to_string(slot), [this](const std::string&, Mat& m) { gen_params_.push_back(&m); });
  disc_.visit("disc", [this](const std::string&, Mat& m) { disc_params_.push_back(&m); });
  gen_opt_ = Adam(gen_params_, cfg_.learning_rate);
  disc_opt_ = Adam(disc_params_, cfg_.disc_learning_rate);
}

StepReport Trainer::step(std::uint64_t rng_seed, const std::vector<Mat>& real_images) {
  StepReport report;
  report.step = steps_;
  const int n = cfg_.batch;
  const int res = generator_.cfg.resolution;

  const ContrastiveBatch batch = make_contrastive_batch(rng_seed, n, cfg_.slots, latent_);

  // Plain forward for the discriminator phase; the generator is a constant
  // while the discriminator updates.
  std::vector<Mat> fakes;
  fakes.reserve(static_cast<std::size_t>(n));
  for (const LatentSample& z : batch.latents)
    fakes.push_back(generate(map_to_w(z, mapping_, latent_), generator_).image);

  bool disc_ok = true;
  if (cfg_.adversarial_weight > 0 && !real_images.empty()) {
    ad::Tape t;
    DiscriminatorVars dv = lift(t, disc_);
    ad::Var loss{};
    for (const Mat& fake : fakes) {
      ad::Var l = t.softplus(discriminator_logit(t, t.leaf(fake), res, dv));
      loss = loss.valid() ? t.add(loss, l) : l;
    }
    loss = t.scale(loss, 1.0 / static_cast<double>(fakes.size()));
    ad::Var real_term{};
    for (const Mat& real : real_images) {
      ad::Var l = t.softplus(t.neg(discriminator_logit(t, t.leaf(real), res, dv)));
      real_term = real_term.valid() ? t.add(real_term, l) : l;
    }
    loss = t.add(loss, t.scale(real_term, 1.0 / static_cast<double>(real_images.size())));

    // Stochastic directional estimate of the gradient penalty |dD/dx|^2 at
    // real samples: dim * ((D(x+eps v) - D(x-eps v)) / 2 eps)^2 for a random
    // unit direction v. First-order differentiable w.r.t. the weights.
    ad::Var r1{};
    RandomStream probe_rng(derive_seed(rng_seed, "r1"));
    const double eps = cfg_.r1_probe_eps;
    for (const Mat& real : real_images) {
      Mat dir = probe_rng.normal_matrix(real.rows(), real.cols());
      dir /= dir.norm();
      ad::Var lp = discriminator_logit(t, t.leaf(real + eps * dir), res, dv);
      ad::Var lm = discriminator_logit(t, t.leaf(real - eps * dir), res, dv);
      ad::Var slope = t.scale(t.sub(lp, lm), 1.0 / (2.0 * eps));
      ad::Var est = t.scale(t.square(slope), static_cast<double>(real.size()));
      r1 = r1.valid() ? t.add(r1, est) : est;
    }
    r1 = t.scale(r1, 1.0 / static_cast<double>(real_images.size()));
    ad::Var total = t.add(loss, t.scale(r1, cfg_.r1_weight));

    report.discriminator = t.scalar(loss);
    report.r1_penalty = t.scalar(r1);
    if (std::isfinite(t.scalar(total))) {
      t.backward(total);
      std::vector<Mat> grads;
      grads.reserve(disc_params_.size());
      for (const auto& [w, b] : dv.convs) {
        grads.push_back(t.grad(w));
        grads.push_back(t.grad(b));
      }
      grads.push_back(t.grad(dv.out_weight));
      grads.push_back(t.grad(dv.out_bias));
      disc_opt_.step(grads);
    } else {
      disc_ok = false;
    }
  }

  // Generator + heads phase.
  ad::Tape t;
  GeneratorVars gv = lift(t, generator_);
  std::array<MlpVars, 5> global_maps;
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i)
    global_maps[i] = lift(t, mapping_.global[i]);
  MlpVars local_map = lift(t, mapping_.local);
  std::map<AttributeSlot, ProjectionHeadVars> head_vars;
  for (auto& [slot, head] : heads_) head_vars.emplace(slot, lift(t, head));

  std::vector<ad::Var> images;
  images.reserve(static_cast<std::size_t>(n));
  for (const LatentSample& z : batch.latents) {
    ExtendedLatentVars wv;
    std::vector<ad::Var> slot_codes;
    for (std::size_t i = 0; i < kAttributeSlots.size(); ++i) {
      if (latent_.slot_dim(kAttributeSlots[i]) == 0) continue;
      ad::Var zi = t.leaf(z.global.slots[i].transpose());
      slot_codes.push_back(mlp_forward(t, zi, global_maps[i]));
    }
    wv.w_global = slot_codes.size() == 1 ? slot_codes[0] : t.concat_cols(slot_codes);
    for (int k = 0; k < latent_.components; ++k) {
      ad::Var zk = t.leaf(z.local.codes[static_cast<std::size_t>(k)].transpose());
      ad::Var mapped = mlp_forward(t, zk, local_map);
      wv.w_structure.push_back(mapped);
      wv.w_texture.push_back(mapped);
    }
    auto [image, sem] = generate_graph(t, gv, wv, generator_);
    (void)sem;
    images.push_back(image);
  }

  ad::Var total{};
  int anchor_count = 0;
  double contrastive_sum = 0.0;
  for (AttributeSlot slot : cfg_.slots) {
    const ProjectionHeadVars* hv =
        head_vars.count(slot) ? &head_vars.at(slot) : nullptr;
    auto [loss, has_pairs] =
        attribute_loss_graph(t, batch, images, res, res, slot, *encoders_.at(slot), hv,
                             cfg_.contrastive);
    report.attribute_losses[to_string(slot)] = t.scalar(loss);
    report.missing_pairs[to_string(slot)] = !has_pairs;
    if (has_pairs) {
      total = total.valid() ? t.add(total, loss) : loss;
      int pairs = 0;
      for (const auto& p : batch.pairs) pairs += p.slot == slot ? 1 : 0;
      anchor_count += pairs * (cfg_.contrastive.mirroring ? 2 : 1);
      contrastive_sum += t.scalar(loss);
    }
  }
  report.per_anchor_contrastive = anchor_count > 0 ? contrastive_sum / anchor_count : 0.0;

  if (cfg_.adversarial_weight > 0) {
    DiscriminatorVars dv = lift(t, disc_);
    ad::Var adv{};
    for (ad::Var img : images) {
      ad::Var l = t.softplus(t.neg(discriminator_logit(t, img, res, dv)));
      adv = adv.valid() ? t.add(adv, l) : l;
    }
    adv = t.scale(adv, 1.0 / static_cast<double>(images.size()));
    report.adversarial = t.scalar(adv);
    ad::Var weighted = t.scale(adv, cfg_.adversarial_weight);
    total = total.valid() ? t.add(total, weighted) : weighted;
  }

  if (!total.valid()) {
    report.applied = disc_ok;
    ++steps_;
    return report;
  }

  report.total = t.scalar(total);
  if (!std::isfinite(report.total)) {
    report.applied = false;
    ++steps_;
    return report;
  }

  t.backward(total);
  std::vector<Mat> grads;
  grads.reserve(gen_params_.size());
  std::vector<ad::Var> leaves;
  auto push_stage = [&](const StageLayerVars& l) {
    leaves.push_back(l.weight);
    leaves.push_back(l.bias);
    leaves.push_back(l.film.weight);
    leaves.push_back(l.film.bias);
  };
  for (const ComponentVars& comp : gv.component) {
    for (const auto& l : comp.coarse) push_stage(l);
    for (const auto& l : comp.structure) push_stage(l);
    for (const auto& l : comp.texture) push_stage(l);
  }
  for (const auto& [w, b] : gv.renderer_convs) {
    leaves.push_back(w);
    leaves.push_back(b);
  }
  leaves.push_back(gv.rgb_weight);
  leaves.push_back(gv.rgb_bias);
  leaves.push_back(gv.semantic_weight);
  leaves.push_back(gv.semantic_bias);
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i)
    for (std::size_t l = 0; l < global_maps[i].weights.size(); ++l) {
      leaves.push_back(global_maps[i].weights[l]);
      leaves.push_back(global_maps[i].biases[l]);
    }
  for (std::size_t l = 0; l < local_map.weights.size(); ++l) {
    leaves.push_back(local_map.weights[l]);
    leaves.push_back(local_map.biases[l]);
  }
  for (auto& [slot, hv] : head_vars) {
    leaves.push_back(hv.w1);
    leaves.push_back(hv.b1);
    leaves.push_back(hv.w2);
    leaves.push_back(hv.b2);
  }
  if (leaves.size() != gen_params_.size())
    throw NumericalError("trainer: parameter/leaf bookkeeping mismatch");
  for (ad::Var v : leaves) grads.push_back(t.grad(v));
  gen_opt_.step(grads);
  report.applied = disc_ok;
  ++steps_;
  return report;
}

}  // namespace vera
