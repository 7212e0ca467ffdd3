#pragma once

#include "vera/common.hpp"
#include "vera/image.hpp"

namespace vera {

struct BlendConfig {
  double sigma = 3.0;   // blur std, pixels at 64x64; scaled linearly with resolution
  int kernel_size = 13; // odd
  double eta = 0.4;     // threshold in (0,1)

  void validate() const;
  /// Defaults are stated at 64x64; blur geometry scales linearly with size.
  BlendConfig scaled_to(int resolution) const;
};

/// Normalized Gaussian kernel; sigma=0 degenerates to a discrete delta.
Mat gaussian_kernel(double sigma, int size);

/// Inpainting-band mask: threshold the blurred union of the real and
/// synthetic masks, then remove the real mask (set difference, clamped at
/// zero). The convolution is direct with replicate padding.
MaskImage blend_mask(const MaskImage& m_real, const MaskImage& m_syn, const BlendConfig& cfg);

/// Fills hole pixels from surrounding content; everything outside hole_mask
/// comes back bit-unchanged.
class InpaintingPrior {
 public:
  virtual ~InpaintingPrior() = default;
  virtual Image fill(const Image& image, const MaskImage& hole_mask) const = 0;
};

/// Iterative neighbor averaging inside the hole (Jacobi diffusion). A learned
/// mask-aware inpainting model wraps the same interface.
class DiffusionInpainter final : public InpaintingPrior {
 public:
  explicit DiffusionInpainter(int iterations = 200) : iterations_(iterations) {}
  Image fill(const Image& image, const MaskImage& hole_mask) const override;

 private:
  int iterations_;
};

/// Final artifact-removal pass with frozen weights; identity by default, a
/// learned face-restoration model wraps the same interface.
class RestorationPrior {
 public:
  virtual ~RestorationPrior() = default;
  virtual Image restore(const Image& image) const = 0;
};

class IdentityRestoration final : public RestorationPrior {
 public:
  Image restore(const Image& image) const override { return image; }
};

/// Pixel fusion: m_real pixels copied bit-exactly from the original, m_inp
/// pixels inpainted over the composite, everything else from the synthetic
/// image. The masks must be disjoint.
Image fuse_region(const Image& original, const Image& synthetic, const MaskImage& m_real,
                  const MaskImage& m_inp, const InpaintingPrior& inpainting);

}  // namespace vera
