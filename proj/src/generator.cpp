#include "vera/generator.hpp"

#include "vera/rng.hpp"

#include <cmath>

namespace vera {

void GeneratorConfig::validate() const {
  if (resolution < 1 || grid < 1 || d_fourier < 1 || c_feat < 1)
    throw ConfigError("generator dimensions must be positive");
  if (d_fourier % 2 != 0) throw ConfigError("d_fourier must be even (sin/cos pairs)");
  if (bandwidth < 0) throw ConfigError("bandwidth must be nonnegative");
  if (coarse_layers < 1 || structure_layers < 1 || texture_layers < 1)
    throw ConfigError("stage layer counts must be positive");
  if (renderer_channels.empty()) throw ConfigError("renderer needs at least one conv");
  for (int c : renderer_channels)
    if (c < 1) throw ConfigError("renderer channels must be positive");
  if (resolution != grid * (1 << upsample_stages()))
    throw ConfigError("resolution must equal grid * 2^(renderer upsample stages)");
}

FourierGrid make_fourier_grid(std::uint64_t seed, int h0, int w0, int d_fourier,
                              double bandwidth) {
  if (h0 < 1 || w0 < 1 || d_fourier < 1) throw ConfigError("fourier grid dims must be positive");
  if (d_fourier % 2 != 0) throw ConfigError("d_fourier must be even");
  RandomStream rng(seed);
  const int half = d_fourier / 2;
  const Mat freq = rng.normal_matrix(2, half) * bandwidth;

  FourierGrid grid;
  grid.height = h0;
  grid.width = w0;
  grid.features.resize(static_cast<Eigen::Index>(h0) * w0, d_fourier);
  for (int y = 0; y < h0; ++y) {
    // Pixel-center coordinates normalized into [-1, 1]^2.
    const double cy = (2.0 * y + 1.0) / h0 - 1.0;
    for (int x = 0; x < w0; ++x) {
      const double cx = (2.0 * x + 1.0) / w0 - 1.0;
      const Eigen::Index p = static_cast<Eigen::Index>(y) * w0 + x;
      for (int f = 0; f < half; ++f) {
        const double phase = freq(0, f) * cx + freq(1, f) * cy;
        grid.features(p, f) = std::sin(phase);
        grid.features(p, half + f) = std::cos(phase);
      }
    }
  }
  return grid;
}

namespace {

Film init_film(RandomStream& rng, int style_dim, int channels, double gain) {
  Film f;
  const double scale = style_dim > 0 ? gain / std::sqrt(static_cast<double>(style_dim)) : 0.0;
  f.weight = rng.normal_matrix(style_dim, 2 * channels) * scale;
  f.bias = Mat::Zero(1, 2 * channels);
  return f;
}

StageLayer init_stage(RandomStream& rng, int in, int out, int style_dim, double gain) {
  StageLayer l;
  l.weight = rng.normal_matrix(in, out) * (1.0 / std::sqrt(static_cast<double>(in)));
  l.bias = Mat::Zero(1, out);
  l.film = init_film(rng, style_dim, out, gain);
  return l;
}

}  // namespace

GeneratorParams GeneratorParams::init(std::uint64_t seed, const GeneratorConfig& cfg,
                                      const LatentConfig& latent) {
  cfg.validate();
  latent.validate();
  GeneratorParams p;
  p.cfg = cfg;
  p.components = latent.components;
  p.global_dim = latent.global_dim();
  p.local_dim = latent.d_local;
  p.fourier_seed = derive_seed(seed, "fourier");
  p.grid = make_fourier_grid(p.fourier_seed, cfg.grid, cfg.grid, cfg.d_fourier, cfg.bandwidth);

  for (int k = 0; k < p.components; ++k) {
    RandomStream rng(derive_seed(seed, "component", static_cast<std::uint64_t>(k)));
    ComponentParams comp;
    for (int l = 0; l < cfg.coarse_layers; ++l)
      comp.coarse.push_back(init_stage(rng, l == 0 ? cfg.d_fourier : cfg.c_feat, cfg.c_feat,
                                       p.global_dim, cfg.film_gain));
    for (int l = 0; l < cfg.structure_layers; ++l)
      comp.structure.push_back(init_stage(rng, cfg.c_feat, cfg.c_feat, p.local_dim, cfg.film_gain));
    for (int l = 0; l < cfg.texture_layers; ++l) {
      const bool last = l + 1 == cfg.texture_layers;
      comp.texture.push_back(init_stage(rng, cfg.c_feat, last ? cfg.c_feat + 1 : cfg.c_feat,
                                        p.local_dim, cfg.film_gain));
    }
    p.component.push_back(std::move(comp));
  }

  RandomStream rng(derive_seed(seed, "renderer"));
  int cin = cfg.c_feat;
  for (int cout : cfg.renderer_channels) {
    RendererParams::Conv conv;
    conv.weight = rng.normal_matrix(9 * cin, cout) * (1.0 / std::sqrt(9.0 * cin));
    conv.bias = Mat::Zero(1, cout);
    p.renderer.convs.push_back(std::move(conv));
    cin = cout;
  }
  p.renderer.rgb_weight = rng.normal_matrix(cin, 3) * (1.0 / std::sqrt(static_cast<double>(cin)));
  p.renderer.rgb_bias = Mat::Zero(1, 3);
  p.renderer.semantic_weight =
      rng.normal_matrix(cin, p.components) * (1.0 / std::sqrt(static_cast<double>(cin)));
  p.renderer.semantic_bias = Mat::Zero(1, p.components);
  return p;
}

void GeneratorParams::visit(const std::string& prefix,
                            const std::function<void(const std::string&, Mat&)>& fn) {
  auto visit_stage = [&](const std::string& name, StageLayer& l) {
    fn(name + ".weight", l.weight);
    fn(name + ".bias", l.bias);
    fn(name + ".film.weight", l.film.weight);
    fn(name + ".film.bias", l.film.bias);
  };
  for (std::size_t k = 0; k < component.size(); ++k) {
    char tag[8];
    std::snprintf(tag, sizeof(tag), "c%02zu", k);
    const std::string base = prefix + "." + tag;
    for (std::size_t l = 0; l < component[k].coarse.size(); ++l)
      visit_stage(base + ".coarse" + std::to_string(l), component[k].coarse[l]);
    for (std::size_t l = 0; l < component[k].structure.size(); ++l)
      visit_stage(base + ".structure" + std::to_string(l), component[k].structure[l]);
    for (std::size_t l = 0; l < component[k].texture.size(); ++l)
      visit_stage(base + ".texture" + std::to_string(l), component[k].texture[l]);
  }
  for (std::size_t i = 0; i < renderer.convs.size(); ++i) {
    fn(prefix + ".render.conv" + std::to_string(i) + ".weight", renderer.convs[i].weight);
    fn(prefix + ".render.conv" + std::to_string(i) + ".bias", renderer.convs[i].bias);
  }
  fn(prefix + ".render.rgb.weight", renderer.rgb_weight);
  fn(prefix + ".render.rgb.bias", renderer.rgb_bias);
  fn(prefix + ".render.semantic.weight", renderer.semantic_weight);
  fn(prefix + ".render.semantic.bias", renderer.semantic_bias);
}

std::uint64_t GeneratorParams::state_hash() const {
  std::uint64_t h = fnv1a(&fourier_seed, sizeof(fourier_seed));
  auto* self = const_cast<GeneratorParams*>(this);
  self->visit("gen", [&h](const std::string& name, Mat& m) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(m, h);
  });
  return h;
}

// ---- graph construction ----

GeneratorVars lift(ad::Tape& t, const GeneratorParams& params) {
  GeneratorVars g;
  g.grid = t.leaf(params.grid.features);
  auto lift_stage = [&t](const StageLayer& l) {
    return StageLayerVars{t.leaf(l.weight), t.leaf(l.bias),
                          FilmVars{t.leaf(l.film.weight), t.leaf(l.film.bias)}};
  };
  for (const ComponentParams& comp : params.component) {
    ComponentVars cv;
    for (const StageLayer& l : comp.coarse) cv.coarse.push_back(lift_stage(l));
    for (const StageLayer& l : comp.structure) cv.structure.push_back(lift_stage(l));
    for (const StageLayer& l : comp.texture) cv.texture.push_back(lift_stage(l));
    g.component.push_back(std::move(cv));
  }
  for (const auto& conv : params.renderer.convs)
    g.renderer_convs.emplace_back(t.leaf(conv.weight), t.leaf(conv.bias));
  g.rgb_weight = t.leaf(params.renderer.rgb_weight);
  g.rgb_bias = t.leaf(params.renderer.rgb_bias);
  g.semantic_weight = t.leaf(params.renderer.semantic_weight);
  g.semantic_bias = t.leaf(params.renderer.semantic_bias);
  return g;
}

namespace {

ad::Var apply_film(ad::Tape& t, ad::Var x, ad::Var style, const FilmVars& film, Eigen::Index channels) {
  ad::Var affine = ad::linear(t, style, film.weight, film.bias);  // (1, 2C)
  ad::Var scale = t.slice_cols(affine, 0, channels);
  ad::Var shift = t.slice_cols(affine, channels, channels);
  ad::Var scaled = t.rowwise_scale(x, t.add_scalar(scale, 1.0));
  return t.add_rowvec(scaled, shift);
}

ad::Var stage_forward(ad::Tape& t, ad::Var x, ad::Var style, const StageLayerVars& layer,
                      bool activate) {
  ad::Var y = ad::linear(t, x, layer.weight, layer.bias);
  y = apply_film(t, y, style, layer.film, t.value(y).cols());
  return activate ? t.tanh(y) : y;
}

}  // namespace

ComponentFeatureVars generate_component_graph(ad::Tape& t, const GeneratorVars& g, int k,
                                              ad::Var w_global, ad::Var w_structure,
                                              ad::Var w_texture, const GeneratorParams& params) {
  if (k < 0 || k >= params.components) throw ArgumentError("component index out of range");
  const ComponentVars& comp = g.component[static_cast<std::size_t>(k)];
  const int c_feat = params.cfg.c_feat;

  ad::Var h = g.grid;
  for (const StageLayerVars& l : comp.coarse) h = stage_forward(t, h, w_global, l, true);
  for (const StageLayerVars& l : comp.structure) h = stage_forward(t, h, w_structure, l, true);
  for (std::size_t l = 0; l + 1 < comp.texture.size(); ++l)
    h = stage_forward(t, h, w_texture, comp.texture[l], true);
  ad::Var out = stage_forward(t, h, w_texture, comp.texture.back(), false);  // (P0, c_feat+1)

  ComponentFeatureVars cf;
  cf.features = t.tanh(t.slice_cols(out, 0, c_feat));
  cf.attention = t.slice_cols(out, c_feat, 1);
  return cf;
}

std::pair<ad::Var, ad::Var> fuse_graph(ad::Tape& t,
                                       const std::vector<ComponentFeatureVars>& parts) {
  if (parts.empty()) throw ArgumentError("fuse: no components");
  std::vector<ad::Var> logits;
  logits.reserve(parts.size());
  for (const auto& p : parts) logits.push_back(p.attention);
  ad::Var att = t.concat_cols(logits);          // (P0, K)
  ad::Var weights = t.softmax_rows(att);        // (P0, K)
  ad::Var fused{};
  for (std::size_t k = 0; k < parts.size(); ++k) {
    ad::Var wk = t.slice_cols(weights, static_cast<Eigen::Index>(k), 1);
    ad::Var term = t.colwise_scale(parts[k].features, wk);
    fused = fused.valid() ? t.add(fused, term) : term;
  }
  return {fused, att};
}

std::pair<ad::Var, ad::Var> render_graph(ad::Tape& t, const GeneratorVars& g, ad::Var fused,
                                         ad::Var attention_logits, const GeneratorParams& params) {
  const GeneratorConfig& cfg = params.cfg;
  int h = cfg.grid, w = cfg.grid;
  int cin = cfg.c_feat;
  ad::Var x = fused;
  for (std::size_t i = 0; i < g.renderer_convs.size(); ++i) {
    if (i > 0) {
      x = t.upsample2_bilinear(x, h, w);
      h *= 2;
      w *= 2;
    }
    x = t.tanh(ad::conv3x3(t, x, g.renderer_convs[i].first, g.renderer_convs[i].second, h, w, cin));
    cin = cfg.renderer_channels[i];
  }

  ad::Var image = t.tanh(ad::linear(t, x, g.rgb_weight, g.rgb_bias));

  // Semantic head: attention logits bilinearly upsampled to full resolution
  // plus a learned residual, softmaxed then renormalized.
  ad::Var att = attention_logits;
  int ah = cfg.grid, aw = cfg.grid;
  for (int s = 0; s < cfg.upsample_stages(); ++s) {
    att = t.upsample2_bilinear(att, ah, aw);
    ah *= 2;
    aw *= 2;
  }
  ad::Var residual = ad::linear(t, x, g.semantic_weight, g.semantic_bias);
  ad::Var sem = t.softmax_rows(t.add(att, residual));
  ad::Var rowsum = t.matmul(sem, t.leaf(Mat::Ones(t.value(sem).cols(), 1)));
  ad::Var recip = t.div(t.leaf(Mat::Ones(t.value(rowsum).rows(), 1)), rowsum);
  sem = t.colwise_scale(sem, recip);
  return {image, sem};
}

std::pair<ad::Var, ad::Var> generate_graph(ad::Tape& t, const GeneratorVars& g,
                                           const ExtendedLatentVars& w,
                                           const GeneratorParams& params) {
  if (static_cast<int>(w.w_structure.size()) != params.components ||
      static_cast<int>(w.w_texture.size()) != params.components)
    throw ConfigError("latent has wrong number of local codes");
  std::vector<ComponentFeatureVars> parts;
  parts.reserve(static_cast<std::size_t>(params.components));
  for (int k = 0; k < params.components; ++k)
    parts.push_back(generate_component_graph(t, g, k, w.w_global,
                                             w.w_structure[static_cast<std::size_t>(k)],
                                             w.w_texture[static_cast<std::size_t>(k)], params));
  auto [fused, att] = fuse_graph(t, parts);
  return render_graph(t, g, fused, att, params);
}

// ---- plain wrappers ----

ComponentFeature generate_component(int k, const FourierGrid& grid, const Vec& w_global,
                                    const Vec& w_structure, const Vec& w_texture,
                                    const GeneratorParams& params) {
  if (grid.features.rows() != params.grid.features.rows())
    throw ConfigError("fourier grid does not match generator params");
  ad::Tape t;
  GeneratorVars g = lift(t, params);
  g.grid = t.leaf(grid.features);
  ComponentFeatureVars cf =
      generate_component_graph(t, g, k, t.leaf(w_global.transpose()),
                               t.leaf(w_structure.transpose()), t.leaf(w_texture.transpose()), params);
  return ComponentFeature{t.value(cf.features), t.value(cf.attention)};
}

Mat fuse(const std::vector<ComponentFeature>& parts) {
  if (parts.empty()) throw ArgumentError("fuse: no components");
  const Eigen::Index p0 = parts.front().features.rows();
  const Eigen::Index c = parts.front().features.cols();
  for (const auto& part : parts)
    if (part.features.rows() != p0 || part.features.cols() != c || part.attention.rows() != p0)
      throw ArgumentError("fuse: component shapes disagree");
  ad::Tape t;
  std::vector<ComponentFeatureVars> vars;
  for (const auto& part : parts)
    vars.push_back(ComponentFeatureVars{t.leaf(part.features), t.leaf(part.attention)});
  auto [fused, att] = fuse_graph(t, vars);
  (void)att;
  return t.value(fused);
}

GeneratedOutput render(const Mat& fused, const Mat& attention_logits,
                       const GeneratorParams& params) {
  ad::Tape t;
  GeneratorVars g = lift(t, params);
  auto [image, sem] = render_graph(t, g, t.leaf(fused), t.leaf(attention_logits), params);
  GeneratedOutput out;
  out.height = out.width = params.cfg.resolution;
  out.image = t.value(image);
  out.semantic = t.value(sem);
  return out;
}

GeneratedOutput generate(const ExtendedLatent& w, const GeneratorParams& params) {
  ad::Tape t;
  GeneratorVars g = lift(t, params);
  auto [image, sem] = generate_graph(t, g, lift(t, w), params);
  GeneratedOutput out;
  out.height = out.width = params.cfg.resolution;
  out.image = t.value(image);
  out.semantic = t.value(sem);
  return out;
}

std::vector<ComponentFeature> generate_components(const ExtendedLatent& w,
                                                  const GeneratorParams& params) {
  ad::Tape t;
  GeneratorVars g = lift(t, params);
  ExtendedLatentVars wv = lift(t, w);
  std::vector<ComponentFeature> out;
  for (int k = 0; k < params.components; ++k) {
    ComponentFeatureVars cf =
        generate_component_graph(t, g, k, wv.w_global, wv.w_structure[static_cast<std::size_t>(k)],
                                 wv.w_texture[static_cast<std::size_t>(k)], params);
    out.push_back(ComponentFeature{t.value(cf.features), t.value(cf.attention)});
  }
  return out;
}

}  // namespace vera
