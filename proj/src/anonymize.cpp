#include "vera/anonymize.hpp"

#include "vera/rng.hpp"

#include <algorithm>

namespace vera {

const char* to_string(AnonMode mode) {
  return mode == AnonMode::Clinical ? "clinical" : "regular";
}

AnonMode parse_anon_mode(const std::string& name) {
  if (name == "clinical") return AnonMode::Clinical;
  if (name == "regular") return AnonMode::Regular;
  throw ArgumentError("unknown anonymization mode: " + name);
}

void AnonymizationRequest::validate(const SemanticLayout& layout) const {
  if (mode == AnonMode::Clinical) {
    if (preserve.empty())
      throw ArgumentError("clinical anonymization requires components to preserve");
    for (const std::string& name : preserve) layout.index_of(name);  // throws on unknown
  } else {
    if (!preserve.empty())
      throw ArgumentError("regular anonymization preserves the face exterior implicitly");
    if (layout.face_exterior_indices().empty())
      throw ArgumentError("layout has no face-exterior components for regular mode");
  }
}

std::vector<std::string> AnonymizationRequest::preserve_names(const SemanticLayout& layout) const {
  if (mode == AnonMode::Clinical) return {preserve.begin(), preserve.end()};
  return layout.face_exterior_names();
}

TargetLabels argmax_labels(const GeneratedOutput& output) {
  TargetLabels t;
  t.height = output.height;
  t.width = output.width;
  t.labels.resize(output.semantic.rows());
  for (Eigen::Index p = 0; p < output.semantic.rows(); ++p) {
    Eigen::Index arg = 0;
    output.semantic.row(p).maxCoeff(&arg);
    t.labels[p] = static_cast<int>(arg);
  }
  return t;
}

MaskImage component_mask(const TargetLabels& labels, const std::vector<int>& components) {
  MaskImage m = MaskImage::Zero(labels.height, labels.width);
  for (int y = 0; y < labels.height; ++y)
    for (int x = 0; x < labels.width; ++x) {
      const int v = labels.labels[static_cast<Eigen::Index>(y) * labels.width + x];
      if (std::find(components.begin(), components.end(), v) != components.end()) m(y, x) = 1;
    }
  return m;
}

ExtendedLatent randomize_components(const ExtendedLatent& w, const std::set<std::string>& preserve,
                                    std::uint64_t rng_seed, const MappingParams& mapping,
                                    const LatentConfig& cfg, const SemanticLayout& layout) {
  if (layout.size() != cfg.components)
    throw ConfigError("semantic layout size does not match latent config");
  for (const std::string& name : preserve) layout.index_of(name);  // throws on unknown names

  ExtendedLatent out = w;
  for (int k = 0; k < cfg.components; ++k) {
    if (preserve.count(layout.name(k))) continue;
    RandomStream rng(derive_seed(rng_seed, "component", static_cast<std::uint64_t>(k)));
    const Vec z_structure = rng.normal_vector(cfg.d_local);
    const Vec z_texture = rng.normal_vector(cfg.d_local);
    out.w_structure[static_cast<std::size_t>(k)] = mapping.local.forward(z_structure);
    out.w_texture[static_cast<std::size_t>(k)] = mapping.local.forward(z_texture);
  }
  return out;
}

namespace {

std::vector<int> preserve_indices(const AnonymizationRequest& request,
                                  const SemanticLayout& layout) {
  std::vector<int> idx;
  for (const std::string& name : request.preserve_names(layout)) idx.push_back(layout.index_of(name));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Substitutes freshly sampled+mapped codes into the requested global slots.
/// Slot draws come from per-slot derived streams so the substitution set does
/// not change individual draws.
ExtendedLatent resample_global_slots(const ExtendedLatent& w,
                                     const std::set<AttributeSlot>& slots, std::uint64_t rng_seed,
                                     const AnonymizerModels& models,
                                     std::vector<std::string>& resampled_names) {
  ExtendedLatent out = w;
  for (AttributeSlot slot : kAttributeSlots) {
    if (!slots.count(slot)) continue;
    const int dim = models.latent.slot_dim(slot);
    if (dim == 0) continue;
    RandomStream rng(derive_seed(rng_seed, std::string("slot.") + to_string(slot)));
    const Vec z = rng.normal_vector(dim);
    const Vec code =
        models.mapping->global[static_cast<std::size_t>(slot)].forward(z);
    out = substitute_slot(out, slot, code, models.latent);
    resampled_names.push_back(to_string(slot));
  }
  return out;
}

struct FusedImage {
  Image output;
  MaskImage m_real, m_syn, m_inp;
  bool fused = false;
};

FusedImage fuse_preserved(const Image& original, const GeneratedOutput& synthetic,
                          const TargetLabels& input_labels, const std::vector<int>& preserve_idx,
                          const AnonymizerModels& models, std::vector<std::string>& warnings) {
  FusedImage out;
  out.m_real = component_mask(input_labels, preserve_idx);
  out.m_syn = component_mask(argmax_labels(synthetic), preserve_idx);
  const Image synth_img = image_from_generated(synthetic);
  if ((out.m_real != 0).count() == 0) {
    warnings.push_back("preserved components unmatched in input labels; fusion skipped");
    out.m_inp = MaskImage::Zero(original.height, original.width);
    out.output = synth_img;
    return out;
  }
  const BlendConfig blend = models.blend.scaled_to(original.height);
  out.m_inp = blend_mask(out.m_real, out.m_syn, blend);
  out.output = fuse_region(original, synth_img, out.m_real, out.m_inp, *models.inpainting);
  out.fused = true;
  return out;
}

void check_models(const AnonymizerModels& models) {
  if (!models.generator || !models.mapping || !models.perceptual || !models.inpainting ||
      !models.restoration)
    throw ConfigError("anonymizer models incomplete");
}

}  // namespace

AnonymizationResult anonymize_single(const Image& image, const TargetLabels& labels,
                                     const AnonymizationRequest& request,
                                     const AnonymizerModels& models,
                                     const ExtendedLatent* recovered) {
  check_models(models);
  request.validate(models.layout);
  if (request.arity != AnonArity::Single)
    throw ArgumentError("anonymize_single called with a paired request");

  AnonymizationResult res;
  res.report.mode = to_string(request.mode);
  res.report.arity = "single";
  res.report.rng_seed = request.rng_seed;

  ExtendedLatent inverted;
  if (recovered) {
    inverted = *recovered;
  } else {
    const InversionResult inv = invert_single(image, labels, *models.generator, models.latent,
                                              models.w_mean, *models.perceptual, models.inversion);
    res.report.inversion_diverged = inv.diverged;
    inverted = inv.latent;
  }
  res.recovered.push_back(inverted);

  ExtendedLatent anon = resample_global_slots(inverted, request.resample_slots, request.rng_seed,
                                              models, res.report.resampled_slots);
  const std::vector<std::string> preserve_list = request.preserve_names(models.layout);
  const std::set<std::string> preserve(preserve_list.begin(), preserve_list.end());
  anon = randomize_components(anon, preserve, derive_seed(request.rng_seed, "components"),
                              *models.mapping, models.latent, models.layout);
  res.anonymized.push_back(anon);
  res.report.preserved_components = preserve_list;
  for (int k = 0; k < models.layout.size(); ++k)
    if (!preserve.count(models.layout.name(k)))
      res.report.randomized_components.push_back(models.layout.name(k));

  const GeneratedOutput synthetic = generate(anon, *models.generator);
  FusedImage fused = fuse_preserved(image, synthetic, labels, preserve_indices(request, models.layout),
                                    models, res.report.warnings);
  res.mask_real.push_back(std::move(fused.m_real));
  res.mask_syn.push_back(std::move(fused.m_syn));
  res.mask_inp.push_back(std::move(fused.m_inp));
  res.outputs.push_back(models.restoration->restore(fused.output));
  return res;
}

AnonymizationResult anonymize_paired(const Image& image_a, const TargetLabels& labels_a,
                                     const Image& image_b, const TargetLabels& labels_b,
                                     const AnonymizationRequest& request,
                                     const AnonymizerModels& models,
                                     const ExtendedLatent* recovered_a,
                                     const ExtendedLatent* recovered_b) {
  check_models(models);
  request.validate(models.layout);
  if (request.arity != AnonArity::Paired)
    throw ArgumentError("anonymize_paired called with a single request");
  if ((recovered_a == nullptr) != (recovered_b == nullptr))
    throw ArgumentError("paired anonymization needs both recovered latents or neither");

  AnonymizationResult res;
  res.report.mode = to_string(request.mode);
  res.report.arity = "paired";
  res.report.rng_seed = request.rng_seed;

  if (recovered_a) {
    if (recovered_a->slot_copy(AttributeSlot::Identity, models.latent) !=
        recovered_b->slot_copy(AttributeSlot::Identity, models.latent))
      throw ArgumentError("stored pair latents do not share an identity slot");
    res.recovered.push_back(*recovered_a);
    res.recovered.push_back(*recovered_b);
  } else {
    const PairedInversionResult inv =
        invert_paired(image_a, labels_a, image_b, labels_b, *models.generator, models.latent,
                      models.w_mean, *models.perceptual, models.inversion);
    res.report.inversion_diverged = inv.diverged;
    res.recovered.push_back(inv.first);
    res.recovered.push_back(inv.second);
  }

  // One synthetic identity (and any other requested slots) shared by both
  // images; identical component randomization for joint semantic modification.
  std::vector<std::string> resampled;
  ExtendedLatent anon_a = resample_global_slots(res.recovered[0], request.resample_slots,
                                                request.rng_seed, models, resampled);
  std::vector<std::string> resampled_b;
  ExtendedLatent anon_b = resample_global_slots(res.recovered[1], request.resample_slots,
                                                request.rng_seed, models, resampled_b);
  res.report.resampled_slots = resampled;

  const std::vector<std::string> preserve_list = request.preserve_names(models.layout);
  const std::set<std::string> preserve(preserve_list.begin(), preserve_list.end());
  const std::uint64_t comp_seed = derive_seed(request.rng_seed, "components");
  anon_a = randomize_components(anon_a, preserve, comp_seed, *models.mapping, models.latent,
                                models.layout);
  anon_b = randomize_components(anon_b, preserve, comp_seed, *models.mapping, models.latent,
                                models.layout);
  res.anonymized.push_back(anon_a);
  res.anonymized.push_back(anon_b);
  res.report.preserved_components = preserve_list;
  for (int k = 0; k < models.layout.size(); ++k)
    if (!preserve.count(models.layout.name(k)))
      res.report.randomized_components.push_back(models.layout.name(k));

  const std::vector<int> pidx = preserve_indices(request, models.layout);
  const GeneratedOutput synth_a = generate(anon_a, *models.generator);
  const GeneratedOutput synth_b = generate(anon_b, *models.generator);
  FusedImage fused_a = fuse_preserved(image_a, synth_a, labels_a, pidx, models, res.report.warnings);
  FusedImage fused_b = fuse_preserved(image_b, synth_b, labels_b, pidx, models, res.report.warnings);
  res.mask_real = {fused_a.m_real, fused_b.m_real};
  res.mask_syn = {fused_a.m_syn, fused_b.m_syn};
  res.mask_inp = {fused_a.m_inp, fused_b.m_inp};
  res.outputs.push_back(models.restoration->restore(fused_a.output));
  res.outputs.push_back(models.restoration->restore(fused_b.output));
  return res;
}

}  // namespace vera
