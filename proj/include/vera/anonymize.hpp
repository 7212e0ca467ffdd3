#pragma once

#include "vera/blending.hpp"
#include "vera/common.hpp"
#include "vera/generator.hpp"
#include "vera/image.hpp"
#include "vera/inversion.hpp"
#include "vera/latent.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace vera {

enum class AnonMode { Clinical, Regular };
enum class AnonArity { Single, Paired };

const char* to_string(AnonMode mode);
AnonMode parse_anon_mode(const std::string& name);

/// What to anonymize and what to keep. Clinical mode preserves the named
/// components pixel-exactly; regular (in-place) mode implicitly preserves the
/// face-exterior union of the layout.
struct AnonymizationRequest {
  AnonMode mode = AnonMode::Regular;
  AnonArity arity = AnonArity::Single;
  std::set<std::string> preserve;
  std::set<AttributeSlot> resample_slots = {AttributeSlot::Identity};
  std::uint64_t rng_seed = 0;

  void validate(const SemanticLayout& layout) const;
  /// Effective preserved component names for this mode.
  std::vector<std::string> preserve_names(const SemanticLayout& layout) const;
};

/// Read-only model bundle shared by concurrent requests.
struct AnonymizerModels {
  const GeneratorParams* generator = nullptr;
  const MappingParams* mapping = nullptr;
  LatentConfig latent;
  SemanticLayout layout;
  ExtendedLatent w_mean;
  InversionConfig inversion;
  BlendConfig blend;  // stated at 64x64; scaled to the generator resolution
  const PerceptualMetric* perceptual = nullptr;
  const InpaintingPrior* inpainting = nullptr;
  const RestorationPrior* restoration = nullptr;
};

struct ProvenanceReport {
  std::string mode;
  std::string arity;
  std::uint64_t rng_seed = 0;
  std::vector<std::string> preserved_components;
  std::vector<std::string> randomized_components;
  std::vector<std::string> resampled_slots;
  std::vector<std::string> warnings;
  bool inversion_diverged = false;
};

struct AnonymizationResult {
  std::vector<Image> outputs;
  std::vector<ExtendedLatent> recovered;
  std::vector<ExtendedLatent> anonymized;
  std::vector<MaskImage> mask_real, mask_syn, mask_inp;
  ProvenanceReport report;
};

/// Argmax labels of a generated semantic map.
TargetLabels argmax_labels(const GeneratedOutput& output);

/// Union mask of the given component indices.
MaskImage component_mask(const TargetLabels& labels, const std::vector<int>& components);

/// Replaces both local codes of every component outside `preserve` with
/// mappings of freshly sampled local latents; preserved components and all
/// global slots come back bit-unchanged. Component k draws from the derived
/// stream (seed, "component", k), so its draw does not depend on which other
/// components are preserved.
ExtendedLatent randomize_components(const ExtendedLatent& w, const std::set<std::string>& preserve,
                                    std::uint64_t rng_seed, const MappingParams& mapping,
                                    const LatentConfig& cfg, const SemanticLayout& layout);

/// Full single-image pipeline: invert, resample the requested global slots,
/// randomize non-preserved components, synthesize, fuse the preserved region
/// back, restore. `recovered` skips the inversion when the latent is already
/// known.
AnonymizationResult anonymize_single(const Image& image, const TargetLabels& labels,
                                     const AnonymizationRequest& request,
                                     const AnonymizerModels& models,
                                     const ExtendedLatent* recovered = nullptr);

/// Paired pipeline: joint inversion with a shared identity, one fresh
/// identity code substituted into both, identical component randomization
/// across the pair, then per-image synthesis, fusion and restoration.
/// Stored latents from a previous paired inversion (identity slots bit-equal)
/// can be supplied to skip the optimization.
AnonymizationResult anonymize_paired(const Image& image_a, const TargetLabels& labels_a,
                                     const Image& image_b, const TargetLabels& labels_b,
                                     const AnonymizationRequest& request,
                                     const AnonymizerModels& models,
                                     const ExtendedLatent* recovered_a = nullptr,
                                     const ExtendedLatent* recovered_b = nullptr);

}  // namespace vera
