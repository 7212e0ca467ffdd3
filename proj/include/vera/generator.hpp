#pragma once

#include "vera/autodiff.hpp"
#include "vera/common.hpp"
#include "vera/latent.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace vera {

/// Architecture knobs for the compositional generator. The topology is fixed
/// (per-component coarse/structure/texture stages over a Fourier grid,
/// attention-softmax fusion, upsampling renderer); everything else is sized
/// here.
struct GeneratorConfig {
  int resolution = 64;
  int grid = 16;
  int d_fourier = 64;
  double bandwidth = 1.0;
  int c_feat = 64;
  int coarse_layers = 2;
  int structure_layers = 2;
  int texture_layers = 2;  // includes the output layer producing features+attention
  std::vector<int> renderer_channels = {48, 24, 12};
  double film_gain = 0.5;  // init scale of the modulation affines

  int upsample_stages() const { return static_cast<int>(renderer_channels.size()) - 1; }
  void validate() const;
};

/// Fixed positional encoding: sin/cos of seeded random linear projections of
/// normalized pixel coordinates.
struct FourierGrid {
  int height = 0;
  int width = 0;
  Mat features;  // (H0*W0, d_fourier), entries in [-1, 1]
};

FourierGrid make_fourier_grid(std::uint64_t seed, int h0, int w0, int d_fourier,
                              double bandwidth);

/// Per-component output of the three-stage composition: features plus
/// pre-softmax attention logits.
struct ComponentFeature {
  Mat features;   // (P0, c_feat)
  Mat attention;  // (P0, 1)
};

struct GeneratedOutput {
  int height = 0;
  int width = 0;
  Mat image;     // (H*W, 3) in [-1, 1]
  Mat semantic;  // (H*W, K) per-pixel probabilities summing to 1
};

/// Per-channel affine modulation driven by a style vector:
/// y = x .* (1 + scale(style)) + shift(style). Zero weights = no modulation.
struct Film {
  Mat weight;  // (style_dim, 2*channels): scale block then shift block
  Mat bias;    // (1, 2*channels)
};

struct StageLayer {
  Mat weight;  // (in, out) pointwise conv
  Mat bias;    // (1, out)
  Film film;
};

struct ComponentParams {
  std::vector<StageLayer> coarse;     // modulated by w_global
  std::vector<StageLayer> structure;  // modulated by the structure code
  std::vector<StageLayer> texture;    // modulated by the texture code; last layer
                                      // emits c_feat feature channels + 1 attention logit
};

struct RendererParams {
  struct Conv {
    Mat weight;  // (9*cin, cout)
    Mat bias;    // (1, cout)
  };
  std::vector<Conv> convs;  // convs[0] at grid resolution, one per upsample after
  Mat rgb_weight;           // (c_last, 3)
  Mat rgb_bias;             // (1, 3)
  Mat semantic_weight;      // (c_last, K) residual logits head
  Mat semantic_bias;        // (1, K)
};

struct GeneratorParams {
  GeneratorConfig cfg;
  int components = 13;          // K, matches the semantic layout
  int global_dim = 0;           // style width of the coarse stage
  int local_dim = 0;            // style width of structure/texture stages
  std::uint64_t fourier_seed = 0;
  FourierGrid grid;             // rebuilt from fourier_seed on load
  std::vector<ComponentParams> component;
  RendererParams renderer;

  static GeneratorParams init(std::uint64_t seed, const GeneratorConfig& cfg,
                              const LatentConfig& latent);
  void visit(const std::string& prefix, const std::function<void(const std::string&, Mat&)>& fn);
  std::uint64_t state_hash() const;
};

// ---- tape-side mirrors ----

struct FilmVars {
  ad::Var weight, bias;
};
struct StageLayerVars {
  ad::Var weight, bias;
  FilmVars film;
};
struct ComponentVars {
  std::vector<StageLayerVars> coarse, structure, texture;
};
struct GeneratorVars {
  ad::Var grid;
  std::vector<ComponentVars> component;
  std::vector<std::pair<ad::Var, ad::Var>> renderer_convs;
  ad::Var rgb_weight, rgb_bias, semantic_weight, semantic_bias;
};

struct ComponentFeatureVars {
  ad::Var features;
  ad::Var attention;
};

GeneratorVars lift(ad::Tape& t, const GeneratorParams& params);

ComponentFeatureVars generate_component_graph(ad::Tape& t, const GeneratorVars& g, int k,
                                              ad::Var w_global, ad::Var w_structure,
                                              ad::Var w_texture, const GeneratorParams& params);

/// Per-pixel softmax over the K attention logits, then attention-weighted sum
/// of the component features. Returns {fused features, raw logits}.
std::pair<ad::Var, ad::Var> fuse_graph(ad::Tape& t, const std::vector<ComponentFeatureVars>& parts);

/// Upsampling conv cascade to full resolution; tanh-bounded image head and a
/// semantic head combining bilinearly upsampled attention logits with a
/// learned residual, softmaxed and renormalized.
std::pair<ad::Var, ad::Var> render_graph(ad::Tape& t, const GeneratorVars& g, ad::Var fused,
                                         ad::Var attention_logits, const GeneratorParams& params);

std::pair<ad::Var, ad::Var> generate_graph(ad::Tape& t, const GeneratorVars& g,
                                           const ExtendedLatentVars& w,
                                           const GeneratorParams& params);

// ---- plain (value-level) entry points ----

ComponentFeature generate_component(int k, const FourierGrid& grid, const Vec& w_global,
                                    const Vec& w_structure, const Vec& w_texture,
                                    const GeneratorParams& params);

Mat fuse(const std::vector<ComponentFeature>& parts);

GeneratedOutput render(const Mat& fused, const Mat& attention_logits,
                       const GeneratorParams& params);

GeneratedOutput generate(const ExtendedLatent& w, const GeneratorParams& params);

std::vector<ComponentFeature> generate_components(const ExtendedLatent& w,
                                                  const GeneratorParams& params);

}  // namespace vera
