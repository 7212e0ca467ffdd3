#include "vera/latent.hpp"

#include "vera/rng.hpp"

#include <algorithm>
#include <set>

namespace vera {

const char* to_string(AttributeSlot slot) {
  switch (slot) {
    case AttributeSlot::Identity: return "identity";
    case AttributeSlot::Expression: return "expression";
    case AttributeSlot::Pose: return "pose";
    case AttributeSlot::Age: return "age";
    case AttributeSlot::Free: return "free";
  }
  return "?";
}

AttributeSlot parse_attribute_slot(const std::string& name) {
  for (AttributeSlot s : kAttributeSlots)
    if (name == to_string(s)) return s;
  throw ArgumentError("unknown attribute slot: " + name);
}

int LatentConfig::slot_dim(AttributeSlot slot) const {
  switch (slot) {
    case AttributeSlot::Identity: return d_identity;
    case AttributeSlot::Expression: return d_expression;
    case AttributeSlot::Pose: return d_pose;
    case AttributeSlot::Age: return d_age;
    case AttributeSlot::Free: return d_free;
  }
  return 0;
}

int LatentConfig::slot_offset(AttributeSlot slot) const {
  int offset = 0;
  for (AttributeSlot s : kAttributeSlots) {
    if (s == slot) return offset;
    offset += slot_dim(s);
  }
  return offset;
}

int LatentConfig::global_dim() const {
  int total = 0;
  for (AttributeSlot s : kAttributeSlots) total += slot_dim(s);
  return total;
}

void LatentConfig::validate() const {
  for (AttributeSlot s : kAttributeSlots)
    if (slot_dim(s) < 0) throw ConfigError("negative slot dimension");
  if (global_dim() < 1) throw ConfigError("global latent has zero total dimension");
  if (d_local < 1) throw ConfigError("d_local must be positive");
  if (components < 1) throw ConfigError("components must be positive");
  if (mapping_layers < 1) throw ConfigError("mapping_layers must be positive");
  // Slot disjointness: offsets are cumulative by construction; verify anyway.
  int expected = 0;
  for (AttributeSlot s : kAttributeSlots) {
    if (slot_offset(s) != expected) throw ConfigError("slot ranges overlap");
    expected += slot_dim(s);
  }
}

Vec GlobalLatent::concat() const {
  Eigen::Index total = 0;
  for (const Vec& v : slots) total += v.size();
  Vec out(total);
  Eigen::Index at = 0;
  for (const Vec& v : slots) {
    out.segment(at, v.size()) = v;
    at += v.size();
  }
  return out;
}

Vec flatten(const ExtendedLatent& w) {
  Eigen::Index total = w.w_global.size();
  for (const Vec& v : w.w_structure) total += v.size();
  for (const Vec& v : w.w_texture) total += v.size();
  Vec out(total);
  Eigen::Index at = 0;
  out.segment(at, w.w_global.size()) = w.w_global;
  at += w.w_global.size();
  for (const Vec& v : w.w_structure) {
    out.segment(at, v.size()) = v;
    at += v.size();
  }
  for (const Vec& v : w.w_texture) {
    out.segment(at, v.size()) = v;
    at += v.size();
  }
  return out;
}

ExtendedLatent unflatten(const Vec& flat, const LatentConfig& cfg) {
  if (flat.size() != cfg.extended_dim()) throw ArgumentError("unflatten: size mismatch");
  ExtendedLatent w;
  Eigen::Index at = 0;
  w.w_global = flat.segment(at, cfg.global_dim());
  at += cfg.global_dim();
  w.w_structure.resize(static_cast<std::size_t>(cfg.components));
  w.w_texture.resize(static_cast<std::size_t>(cfg.components));
  for (int k = 0; k < cfg.components; ++k) {
    w.w_structure[static_cast<std::size_t>(k)] = flat.segment(at, cfg.d_local);
    at += cfg.d_local;
  }
  for (int k = 0; k < cfg.components; ++k) {
    w.w_texture[static_cast<std::size_t>(k)] = flat.segment(at, cfg.d_local);
    at += cfg.d_local;
  }
  return w;
}

ExtendedLatentVars lift(ad::Tape& t, const ExtendedLatent& w) {
  ExtendedLatentVars v;
  v.w_global = t.leaf(w.w_global.transpose());
  for (const Vec& c : w.w_structure) v.w_structure.push_back(t.leaf(c.transpose()));
  for (const Vec& c : w.w_texture) v.w_texture.push_back(t.leaf(c.transpose()));
  return v;
}

ExtendedLatentVars split_extended(ad::Tape& t, ad::Var flat, const LatentConfig& cfg) {
  if (t.value(flat).rows() != 1 || t.value(flat).cols() != cfg.extended_dim())
    throw ArgumentError("split_extended: expected a (1, extended_dim) var");
  ExtendedLatentVars v;
  Eigen::Index at = 0;
  v.w_global = t.slice_cols(flat, at, cfg.global_dim());
  at += cfg.global_dim();
  for (int k = 0; k < cfg.components; ++k, at += cfg.d_local)
    v.w_structure.push_back(t.slice_cols(flat, at, cfg.d_local));
  for (int k = 0; k < cfg.components; ++k, at += cfg.d_local)
    v.w_texture.push_back(t.slice_cols(flat, at, cfg.d_local));
  return v;
}

// ---- SemanticLayout ----

namespace {
const std::set<std::string>& exterior_name_set() {
  static const std::set<std::string> kSet = {"hair", "neck",     "background", "clothes",
                                             "ears", "earrings", "hats"};
  return kSet;
}
}  // namespace

SemanticLayout::SemanticLayout(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("semantic layout: empty component name");
    if (!seen.insert(n).second) throw ConfigError("semantic layout: duplicate name " + n);
  }
  if (names_.empty()) throw ConfigError("semantic layout: no components");
}

SemanticLayout SemanticLayout::celebamask13() {
  return SemanticLayout({"background", "face", "eyebrows", "eyes", "glasses", "ears", "earrings",
                         "nose", "mouth", "neck", "clothes", "hair", "hats"});
}

int SemanticLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return static_cast<int>(i);
  throw ArgumentError("unknown semantic component: " + name);
}

bool SemanticLayout::contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

std::vector<int> SemanticLayout::face_exterior_indices() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (exterior_name_set().count(names_[i])) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<std::string> SemanticLayout::face_exterior_names() const {
  std::vector<std::string> out;
  for (const auto& n : names_)
    if (exterior_name_set().count(n)) out.push_back(n);
  return out;
}

bool SemanticLayout::is_face_exterior(int index) const {
  return exterior_name_set().count(name(index)) > 0;
}

std::map<std::string, int> SemanticLayout::to_table() const {
  std::map<std::string, int> t;
  for (std::size_t i = 0; i < names_.size(); ++i) t[names_[i]] = static_cast<int>(i);
  return t;
}

SemanticLayout SemanticLayout::from_table(const std::map<std::string, int>& table) {
  std::vector<std::string> names(table.size());
  for (const auto& [name, idx] : table) {
    if (idx < 0 || idx >= static_cast<int>(table.size()))
      throw ConfigError("semantic layout table: index range not contiguous");
    if (!names[static_cast<std::size_t>(idx)].empty())
      throw ConfigError("semantic layout table: duplicate index");
    names[static_cast<std::size_t>(idx)] = name;
  }
  return SemanticLayout(names);
}

// ---- Mlp ----

Vec Mlp::forward(const Vec& x) const {
  if (weights.empty()) return x;
  Vec h = x;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    Vec y = weights[l].transpose() * h + biases[l].row(0).transpose();
    if (l + 1 < weights.size()) y = y.array().tanh();
    h = std::move(y);
  }
  return h;
}

MlpVars lift(ad::Tape& t, const Mlp& mlp) {
  MlpVars v;
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    v.weights.push_back(t.leaf(mlp.weights[l]));
    v.biases.push_back(t.leaf(mlp.biases[l]));
  }
  return v;
}

ad::Var mlp_forward(ad::Tape& t, ad::Var x, const MlpVars& vars) {
  ad::Var h = x;  // (1, d)
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    h = ad::linear(t, h, vars.weights[l], vars.biases[l]);
    if (l + 1 < vars.weights.size()) h = t.tanh(h);
  }
  return h;
}

namespace {

Mlp init_mlp(RandomStream& rng, int dim, int layers) {
  Mlp mlp;
  if (dim == 0) return mlp;  // degenerate slot: nothing to map
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int l = 0; l < layers; ++l) {
    mlp.weights.push_back(rng.normal_matrix(dim, dim) * scale);
    mlp.biases.push_back(Mat::Zero(1, dim));
  }
  return mlp;
}

}  // namespace

MappingParams MappingParams::init(std::uint64_t seed, const LatentConfig& cfg) {
  cfg.validate();
  MappingParams p;
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i) {
    RandomStream rng(derive_seed(seed, "mapping.global", i));
    p.global[i] = init_mlp(rng, cfg.slot_dim(kAttributeSlots[i]), cfg.mapping_layers);
  }
  RandomStream rng(derive_seed(seed, "mapping.local"));
  p.local = init_mlp(rng, cfg.d_local, cfg.mapping_layers);
  return p;
}

void MappingParams::visit(const std::string& prefix,
                          const std::function<void(const std::string&, Mat&)>& fn) {
  auto visit_mlp = [&](const std::string& name, Mlp& mlp) {
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
      fn(name + ".l" + std::to_string(l) + ".weight", mlp.weights[l]);
      fn(name + ".l" + std::to_string(l) + ".bias", mlp.biases[l]);
    }
  };
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i)
    visit_mlp(prefix + "." + to_string(kAttributeSlots[i]), global[i]);
  visit_mlp(prefix + ".local", local);
}

// ---- operations ----

LatentSample sample_latent(std::uint64_t rng_seed, const LatentConfig& cfg) {
  cfg.validate();
  RandomStream rng(rng_seed);
  LatentSample z;
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i)
    z.global.slots[i] = rng.normal_vector(cfg.slot_dim(kAttributeSlots[i]));
  z.local.codes.resize(static_cast<std::size_t>(cfg.components));
  for (int k = 0; k < cfg.components; ++k)
    z.local.codes[static_cast<std::size_t>(k)] = rng.normal_vector(cfg.d_local);
  return z;
}

namespace {

void check_mapping_shapes(const MappingParams& mapping, const LatentConfig& cfg) {
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i) {
    const int d = cfg.slot_dim(kAttributeSlots[i]);
    const Mlp& mlp = mapping.global[i];
    if (d == 0) {
      if (!mlp.weights.empty()) throw ConfigError("mapping network present for empty slot");
      continue;
    }
    if (mlp.weights.empty()) throw ConfigError("missing mapping network for slot");
    if (mlp.weights.front().rows() != d || mlp.weights.back().cols() != d)
      throw ConfigError("mapping network shape mismatch for slot");
  }
  if (mapping.local.weights.empty() || mapping.local.weights.front().rows() != cfg.d_local ||
      mapping.local.weights.back().cols() != cfg.d_local)
    throw ConfigError("local mapping network shape mismatch");
}

}  // namespace

ExtendedLatent map_to_w(const LatentSample& z, const MappingParams& mapping,
                        const LatentConfig& cfg) {
  cfg.validate();
  check_mapping_shapes(mapping, cfg);
  if (static_cast<int>(z.local.codes.size()) != cfg.components)
    throw ConfigError("latent sample has wrong component count");

  ExtendedLatent w;
  w.w_global.resize(cfg.global_dim());
  for (std::size_t i = 0; i < kAttributeSlots.size(); ++i) {
    const AttributeSlot s = kAttributeSlots[i];
    if (cfg.slot_dim(s) == 0) continue;
    w.w_global.segment(cfg.slot_offset(s), cfg.slot_dim(s)) =
        mapping.global[i].forward(z.global.slots[i]);
  }
  w.w_structure.resize(static_cast<std::size_t>(cfg.components));
  w.w_texture.resize(static_cast<std::size_t>(cfg.components));
  for (int k = 0; k < cfg.components; ++k) {
    // One mapped code per component, duplicated into the structure and
    // texture entries of W+.
    Vec mapped = mapping.local.forward(z.local.codes[static_cast<std::size_t>(k)]);
    w.w_structure[static_cast<std::size_t>(k)] = mapped;
    w.w_texture[static_cast<std::size_t>(k)] = std::move(mapped);
  }
  return w;
}

ContrastiveBatch make_contrastive_batch(std::uint64_t rng_seed, int n,
                                        const std::vector<AttributeSlot>& slots,
                                        const LatentConfig& cfg) {
  if (n < 2) throw ArgumentError("contrastive batch needs at least 2 latents");
  if (n % 2 != 0) throw ArgumentError("contrastive batch size must be even");
  ContrastiveBatch batch;
  batch.latents.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    batch.latents.push_back(sample_latent(derive_seed(rng_seed, "batch", static_cast<std::uint64_t>(i)), cfg));
  if (slots.empty()) return batch;
  // Consecutive pairs (0,1),(2,3),... with slots assigned round-robin, so
  // distinct pairs share distinct attributes whenever the batch allows it.
  for (int p = 0; 2 * p + 1 < n; ++p) {
    const AttributeSlot slot = slots[static_cast<std::size_t>(p) % slots.size()];
    const int a = 2 * p, b = 2 * p + 1;
    batch.latents[static_cast<std::size_t>(b)].global.slot(slot) =
        batch.latents[static_cast<std::size_t>(a)].global.slot(slot);
    batch.pairs.push_back(ContrastivePair{a, b, slot});
  }
  return batch;
}

ExtendedLatent substitute_slot(const ExtendedLatent& w, AttributeSlot slot, const Vec& code,
                               const LatentConfig& cfg) {
  if (code.size() != cfg.slot_dim(slot))
    throw ArgumentError("substitute_slot: code length does not match slot width");
  ExtendedLatent out = w;
  out.w_global.segment(cfg.slot_offset(slot), cfg.slot_dim(slot)) = code;
  return out;
}

ExtendedLatent estimate_w_mean(std::uint64_t rng_seed, int m, const MappingParams& mapping,
                               const LatentConfig& cfg) {
  if (m < 1) throw ArgumentError("estimate_w_mean: m must be >= 1");
  Vec acc = Vec::Zero(cfg.extended_dim());
  for (int i = 0; i < m; ++i) {
    const LatentSample z = sample_latent(derive_seed(rng_seed, "wmean", static_cast<std::uint64_t>(i)), cfg);
    acc += flatten(map_to_w(z, mapping, cfg));
  }
  acc /= static_cast<double>(m);
  return unflatten(acc, cfg);
}

PcaDirections slot_pca_directions(const std::vector<GlobalLatent>& samples, AttributeSlot slot,
                                  int n_dirs) {
  if (samples.size() < 2) throw ArgumentError("slot_pca_directions: need at least 2 samples");
  const Eigen::Index d = samples.front().slot(slot).size();
  if (n_dirs < 1 || n_dirs > d) throw ArgumentError("slot_pca_directions: n_dirs out of range");

  Vec mean = Vec::Zero(d);
  for (const GlobalLatent& g : samples) mean += g.slot(slot);
  mean /= static_cast<double>(samples.size());

  Mat cov = Mat::Zero(d, d);
  for (const GlobalLatent& g : samples) {
    const Vec c = g.slot(slot) - mean;
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<double>(samples.size() - 1);

  Eigen::SelfAdjointEigenSolver<Mat> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("slot_pca_directions: eigensolver failed");

  const double lambda_max = std::max(eig.eigenvalues().maxCoeff(), 0.0);
  const double tol = 1e-12 * std::max(1.0, lambda_max);

  PcaDirections out;
  for (Eigen::Index i = d - 1; i >= 0 && static_cast<int>(out.directions.size()) < n_dirs; --i) {
    if (eig.eigenvalues()[i] <= tol) break;  // eigenvalues ascending
    out.directions.push_back(eig.eigenvectors().col(i).normalized());
  }
  out.degenerate = static_cast<int>(out.directions.size()) < n_dirs;
  return out;
}

}  // namespace vera
