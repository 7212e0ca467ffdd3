#pragma once

#include "vera/autodiff.hpp"
#include "vera/common.hpp"
#include "vera/generator.hpp"
#include "vera/latent.hpp"
#include "vera/optimizer.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vera {

struct ContrastiveConfig {
  double tau = 0.07;
  bool mirroring = true;
  bool use_heads = true;

  void validate() const {
    if (!(tau > 0)) throw ConfigError("tau must be positive");
  }
};

// ---- similarity kernel and losses ----

/// exp(cos(u, v) / tau). Throws DomainError on zero-norm input.
double similarity_g(const Vec& u, const Vec& v, double tau);
ad::Var similarity_g_graph(ad::Tape& t, ad::Var u, ad::Var v, double tau);

/// Both-anchor contrastive loss for one positive pair over a vector batch:
///   -log[ g(va,vb)^2 / (sum_{c!=a} g(va,vc) * sum_{c!=b} g(vb,vc)) ].
/// The denominator sums range over every index except the anchor, positive
/// partner included.
double mirrored_loss(const std::vector<Vec>& batch, const ContrastivePair& pair, double tau);
ad::Var mirrored_loss_graph(ad::Tape& t, const std::vector<ad::Var>& batch, int alpha, int beta,
                            double tau);

/// Standard one-anchor loss: -log( g(v[anchor],v[pos]) / sum_{c!=anchor} g ).
double directional_infonce(const std::vector<Vec>& batch, int anchor, int positive, double tau);
ad::Var directional_infonce_graph(ad::Tape& t, const std::vector<ad::Var>& batch, int anchor,
                                  int positive, double tau);

// ---- frozen attribute encoders and trainable projection heads ----

/// Frozen, deterministic, differentiable image-to-embedding map. Pretrained
/// recognition backbones wrap this interface; tests use StubEncoder.
class AttributeEncoder {
 public:
  virtual ~AttributeEncoder() = default;
  virtual int dim() const = 0;
  /// Differentiable forward on a (H*W, 3) image var; returns a (1, dim) row.
  virtual ad::Var encode(ad::Tape& t, ad::Var image, int height, int width) const = 0;
  Vec encode_plain(const Mat& image, int height, int width) const;
  virtual std::uint64_t state_hash() const = 0;
};

/// Fixed seeded random linear map from average-pooled pixels. Stands in for
/// the frozen recognition/expression/pose/age networks at desk scale.
class StubEncoder final : public AttributeEncoder {
 public:
  StubEncoder(std::uint64_t seed, int input_resolution, int embed_dim = 32, int pooled = 8);
  int dim() const override { return static_cast<int>(weight_.cols()); }
  ad::Var encode(ad::Tape& t, ad::Var image, int height, int width) const override;
  std::uint64_t state_hash() const override;

 private:
  int pooled_;
  Mat weight_;  // (3 * pooled^2, embed_dim)
  Mat bias_;    // (1, embed_dim)
};

struct ProjectionHead {
  Mat w1, b1, w2, b2;  // linear -> tanh -> linear

  static ProjectionHead init(std::uint64_t seed, int in, int hidden, int out);
  Vec forward(const Vec& x) const;
  void visit(const std::string& prefix, const std::function<void(const std::string&, Mat&)>& fn);
};

struct ProjectionHeadVars {
  ad::Var w1, b1, w2, b2;
};
ProjectionHeadVars lift(ad::Tape& t, const ProjectionHead& head);
ad::Var head_forward(ad::Tape& t, ad::Var x, const ProjectionHeadVars& head);

// ---- per-attribute loss over a generated batch ----

struct AttributeLossResult {
  double value = 0.0;
  bool has_pairs = false;
};

/// v_i = head(encoder(image_i)) (head bypassed when use_heads is false); sums
/// the pair losses for `slot`. Returns 0 with has_pairs=false when the batch
/// carries no pair for the slot.
AttributeLossResult attribute_loss(const ContrastiveBatch& batch,
                                   const std::vector<GeneratedOutput>& images, AttributeSlot slot,
                                   const AttributeEncoder& encoder, const ProjectionHead& head,
                                   const ContrastiveConfig& cfg);

std::pair<ad::Var, bool> attribute_loss_graph(ad::Tape& t, const ContrastiveBatch& batch,
                                              const std::vector<ad::Var>& images, int height,
                                              int width, AttributeSlot slot,
                                              const AttributeEncoder& encoder,
                                              const ProjectionHeadVars* head,
                                              const ContrastiveConfig& cfg);

// ---- toy adversarial branch ----

/// Three conv stages with pooling and a linear logit head. Smoke-scale stand-in
/// for the adversarial backbone the generator training builds on.
struct Discriminator {
  struct Conv {
    Mat weight, bias;
  };
  std::vector<Conv> convs;
  Mat out_weight, out_bias;
  int resolution = 0;

  static Discriminator init(std::uint64_t seed, int resolution, int base_channels = 8);
  void visit(const std::string& prefix, const std::function<void(const std::string&, Mat&)>& fn);
};

struct DiscriminatorVars {
  std::vector<std::pair<ad::Var, ad::Var>> convs;
  ad::Var out_weight, out_bias;
};
DiscriminatorVars lift(ad::Tape& t, const Discriminator& d);
ad::Var discriminator_logit(ad::Tape& t, ad::Var image, int resolution,
                            const DiscriminatorVars& d);

// ---- training ----

struct TrainConfig {
  ContrastiveConfig contrastive;
  std::vector<AttributeSlot> slots = {AttributeSlot::Identity, AttributeSlot::Expression,
                                      AttributeSlot::Pose, AttributeSlot::Age};
  int batch = 8;
  double learning_rate = 1e-3;
  double disc_learning_rate = 1e-3;
  double adversarial_weight = 1.0;
  double r1_weight = 1.0;
  double r1_probe_eps = 1e-3;
};

struct StepReport {
  std::map<std::string, double> attribute_losses;
  std::map<std::string, bool> missing_pairs;
  double adversarial = 0.0;
  double discriminator = 0.0;
  double r1_penalty = 0.0;
  double total = 0.0;
  /// Mean per-anchor contrastive loss (mirrored pairs count as two anchors),
  /// a scale-free convergence measure comparable across ablation variants.
  double per_anchor_contrastive = 0.0;
  bool applied = false;
  int step = 0;
};

/// Owns the optimizer state for alternating generator/discriminator updates.
/// Generator, mapping, heads and discriminator are borrowed and mutated;
/// encoders are frozen by contract and only read.
class Trainer {
 public:
  Trainer(GeneratorParams& generator, MappingParams& mapping,
          std::map<AttributeSlot, ProjectionHead>& heads,
          std::map<AttributeSlot, const AttributeEncoder*> encoders, Discriminator& disc,
          const LatentConfig& latent, const TrainConfig& cfg);

  /// One alternating update (discriminator, then generator+heads) on a fresh
  /// contrastive batch. Non-finite losses abort the update (applied=false).
  StepReport step(std::uint64_t rng_seed, const std::vector<Mat>& real_images);

  int steps_taken() const { return steps_; }

 private:
  GeneratorParams& generator_;
  MappingParams& mapping_;
  std::map<AttributeSlot, ProjectionHead>& heads_;
  std::map<AttributeSlot, const AttributeEncoder*> encoders_;
  Discriminator& disc_;
  LatentConfig latent_;
  TrainConfig cfg_;
  std::vector<Mat*> gen_params_;
  std::vector<Mat*> disc_params_;
  Adam gen_opt_;
  Adam disc_opt_;
  int steps_ = 0;
};

}  // namespace vera
