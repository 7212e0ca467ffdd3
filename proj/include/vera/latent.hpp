#pragma once

#include "vera/autodiff.hpp"
#include "vera/common.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vera {

/// High-level attribute slots of the global latent. Each owns a disjoint,
/// contiguous coordinate range; Free is the unconstrained remainder.
enum class AttributeSlot { Identity, Expression, Pose, Age, Free };

inline constexpr std::array<AttributeSlot, 5> kAttributeSlots = {
    AttributeSlot::Identity, AttributeSlot::Expression, AttributeSlot::Pose, AttributeSlot::Age,
    AttributeSlot::Free};

const char* to_string(AttributeSlot slot);
AttributeSlot parse_attribute_slot(const std::string& name);

/// Dimensions of the latent spaces and their mapping networks.
struct LatentConfig {
  int d_identity = 64;
  int d_expression = 64;
  int d_pose = 64;
  int d_age = 64;
  int d_free = 256;
  int d_local = 64;
  int mapping_layers = 2;  // hidden layers use tanh, final layer is affine
  int components = 13;

  int slot_dim(AttributeSlot slot) const;
  int slot_offset(AttributeSlot slot) const;  // layout order: id, expr, pose, age, free
  int global_dim() const;
  /// Total W+ dimension: global plus 2*K local codes.
  int extended_dim() const { return global_dim() + 2 * components * d_local; }
  void validate() const;
};

struct GlobalLatent {
  std::array<Vec, 5> slots;  // indexed by slot order

  Vec& slot(AttributeSlot s) { return slots[static_cast<std::size_t>(s)]; }
  const Vec& slot(AttributeSlot s) const { return slots[static_cast<std::size_t>(s)]; }
  Vec concat() const;
};

struct LocalLatents {
  std::vector<Vec> codes;  // exactly K entries
};

struct LatentSample {
  GlobalLatent global;
  LocalLatents local;
};

/// W+ point: mapped global code plus independent structure/texture codes per
/// component. The w_global slot layout mirrors GlobalLatent.
struct ExtendedLatent {
  Vec w_global;
  std::vector<Vec> w_structure;
  std::vector<Vec> w_texture;

  Eigen::VectorBlock<Vec> slot(AttributeSlot s, const LatentConfig& cfg) {
    return w_global.segment(cfg.slot_offset(s), cfg.slot_dim(s));
  }
  Vec slot_copy(AttributeSlot s, const LatentConfig& cfg) const {
    return w_global.segment(cfg.slot_offset(s), cfg.slot_dim(s));
  }
};

/// Flattened layout: w_global, then structure[0..K), then texture[0..K).
Vec flatten(const ExtendedLatent& w);
ExtendedLatent unflatten(const Vec& flat, const LatentConfig& cfg);

/// Tape-side W+ handles; pieces are (1, d) row vars.
struct ExtendedLatentVars {
  ad::Var w_global;
  std::vector<ad::Var> w_structure;
  std::vector<ad::Var> w_texture;
};

ExtendedLatentVars lift(ad::Tape& t, const ExtendedLatent& w);

/// Views one flat (1, extended_dim) var as the W+ pieces, so a whole latent
/// can be optimized as a single leaf.
ExtendedLatentVars split_extended(ad::Tape& t, ad::Var flat, const LatentConfig& cfg);

/// Ordered component-name table for the semantic generators.
class SemanticLayout {
 public:
  SemanticLayout() = default;
  explicit SemanticLayout(std::vector<std::string> names);

  /// The 13-component table used by default (CelebAMask-style collapse).
  static SemanticLayout celebamask13();

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  int index_of(const std::string& name) const;  // throws ArgumentError
  bool contains(const std::string& name) const;

  /// Everything outside the face contour: hair, neck, background, clothes,
  /// ears, earrings, hats (those present in this layout).
  std::vector<int> face_exterior_indices() const;
  std::vector<std::string> face_exterior_names() const;
  bool is_face_exterior(int index) const;

  std::map<std::string, int> to_table() const;
  static SemanticLayout from_table(const std::map<std::string, int>& table);

 private:
  std::vector<std::string> names_;
};

struct ContrastivePair {
  int alpha = 0;
  int beta = 0;
  AttributeSlot slot = AttributeSlot::Identity;
};

/// Latent batch with explicit positive-pair structure: each pair shares one
/// slot's sub-vector exactly.
struct ContrastiveBatch {
  std::vector<LatentSample> latents;
  std::vector<ContrastivePair> pairs;
};

// ---- mapping networks ----

struct Mlp {
  std::vector<Mat> weights;  // (in, out) per layer
  std::vector<Mat> biases;   // (1, out) per layer

  int layers() const { return static_cast<int>(weights.size()); }
  Vec forward(const Vec& x) const;  // tanh between layers, affine output
};

struct MlpVars {
  std::vector<ad::Var> weights, biases;
};

MlpVars lift(ad::Tape& t, const Mlp& mlp);
ad::Var mlp_forward(ad::Tape& t, ad::Var x, const MlpVars& vars);

/// One MLP per global slot (including the free slot) plus one shared MLP
/// applied to every per-component local code.
struct MappingParams {
  std::array<Mlp, 5> global;
  Mlp local;

  static MappingParams init(std::uint64_t seed, const LatentConfig& cfg);
  void visit(const std::string& prefix, const std::function<void(const std::string&, Mat&)>& fn);
};

// ---- operations ----

LatentSample sample_latent(std::uint64_t rng_seed, const LatentConfig& cfg);

ExtendedLatent map_to_w(const LatentSample& z, const MappingParams& mapping,
                        const LatentConfig& cfg);

ContrastiveBatch make_contrastive_batch(std::uint64_t rng_seed, int n,
                                        const std::vector<AttributeSlot>& slots,
                                        const LatentConfig& cfg);

ExtendedLatent substitute_slot(const ExtendedLatent& w, AttributeSlot slot, const Vec& code,
                               const LatentConfig& cfg);

/// Coordinate-wise mean of M mapped samples; sample i uses
/// derive_seed(rng_seed, "wmean", i).
ExtendedLatent estimate_w_mean(std::uint64_t rng_seed, int m, const MappingParams& mapping,
                               const LatentConfig& cfg);

struct PcaDirections {
  std::vector<Vec> directions;  // unit norm, mutually orthogonal
  bool degenerate = false;      // fewer directions available than requested
};

PcaDirections slot_pca_directions(const std::vector<GlobalLatent>& samples, AttributeSlot slot,
                                  int n_dirs);

}  // namespace vera
