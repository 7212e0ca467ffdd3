#include "vera/blending.hpp"

#include <cmath>

namespace vera {

void BlendConfig::validate() const {
  if (sigma < 0) throw ConfigError("blend sigma must be nonnegative");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  if (!(eta > 0 && eta < 1)) throw ConfigError("eta must lie in (0,1)");
}

BlendConfig BlendConfig::scaled_to(int resolution) const {
  validate();
  const double factor = static_cast<double>(resolution) / 64.0;
  BlendConfig out = *this;
  out.sigma = sigma * factor;
  int k = static_cast<int>(std::lround(kernel_size * factor));
  if (k % 2 == 0) ++k;
  out.kernel_size = std::max(1, k);
  return out;
}

Mat gaussian_kernel(double sigma, int size) {
  if (size < 1 || size % 2 == 0) throw ArgumentError("gaussian_kernel: size must be odd");
  if (sigma < 0) throw ArgumentError("gaussian_kernel: sigma must be nonnegative");
  Mat k(size, size);
  const int c = size / 2;
  if (sigma == 0.0) {
    k.setZero();
    k(c, c) = 1.0;
    return k;
  }
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - c, dx = x - c;
      k(y, x) = std::exp(-(dx * dx + dy * dy) * inv);
    }
  k /= k.sum();
  return k;
}

MaskImage blend_mask(const MaskImage& m_real, const MaskImage& m_syn, const BlendConfig& cfg) {
  cfg.validate();
  if (m_real.rows() != m_syn.rows() || m_real.cols() != m_syn.cols())
    throw ArgumentError("blend_mask: mask shapes differ");
  const Eigen::Index h = m_real.rows(), w = m_real.cols();
  const Mat kernel = gaussian_kernel(cfg.sigma, cfg.kernel_size);
  const int c = cfg.kernel_size / 2;

  MaskImage out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int ky = 0; ky < cfg.kernel_size; ++ky) {
        for (int kx = 0; kx < cfg.kernel_size; ++kx) {
          Eigen::Index sy = y + ky - c;
          Eigen::Index sx = x + kx - c;
          sy = std::min(std::max(sy, Eigen::Index{0}), h - 1);  // replicate padding
          sx = std::min(std::max(sx, Eigen::Index{0}), w - 1);
          const double u = (m_real(sy, sx) != 0 || m_syn(sy, sx) != 0) ? 1.0 : 0.0;
          acc += kernel(ky, kx) * u;
        }
      }
      const bool band = acc > cfg.eta;
      // Set difference: a pixel of the preserved real mask never lands in the
      // inpainting band, even where the thresholded blur covers it.
      out(y, x) = (band && m_real(y, x) == 0) ? 1 : 0;
    }
  }
  return out;
}

Image DiffusionInpainter::fill(const Image& image, const MaskImage& hole_mask) const {
  if (hole_mask.rows() != image.height || hole_mask.cols() != image.width)
    throw ArgumentError("inpaint: mask shape mismatch");
  Image out = image;
  if ((hole_mask != 0).count() == 0) return out;

  const int h = image.height, w = image.width;
  // Seed hole pixels with the mean of the known region, then relax.
  Vec mean = Vec::Zero(3);
  Eigen::Index known = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (hole_mask(y, x) == 0) {
        mean += image.data.row(y * w + x).transpose();
        ++known;
      }
  if (known > 0) mean /= static_cast<double>(known);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (hole_mask(y, x) != 0) out.data.row(y * w + x) = mean.transpose();

  Mat next = out.data;
  for (int it = 0; it < iterations_; ++it) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (hole_mask(y, x) == 0) continue;
        Vec acc = Vec::Zero(3);
        int count = 0;
        const int ys[4] = {y - 1, y + 1, y, y};
        const int xs[4] = {x, x, x - 1, x + 1};
        for (int nIdx = 0; nIdx < 4; ++nIdx) {
          const int ny = ys[nIdx], nx = xs[nIdx];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          acc += out.data.row(ny * w + nx).transpose();
          ++count;
        }
        if (count > 0) next.row(y * w + x) = (acc / count).transpose();
      }
    }
    out.data.swap(next);
    next = out.data;
  }
  return out;
}

Image fuse_region(const Image& original, const Image& synthetic, const MaskImage& m_real,
                  const MaskImage& m_inp, const InpaintingPrior& inpainting) {
  if (original.height != synthetic.height || original.width != synthetic.width)
    throw ArgumentError("fuse_region: image shapes differ");
  if (m_real.rows() != original.height || m_real.cols() != original.width ||
      m_inp.rows() != original.height || m_inp.cols() != original.width)
    throw ArgumentError("fuse_region: mask shape mismatch");
  if (((m_real != 0) && (m_inp != 0)).count() != 0)
    throw ArgumentError("fuse_region: masks must be disjoint");

  const int h = original.height, w = original.width;
  Image composite = synthetic;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (m_real(y, x) != 0) composite.data.row(y * w + x) = original.data.row(y * w + x);

  Image filled = inpainting.fill(composite, m_inp);
  // Re-assert the copy contract so a misbehaving prior cannot leak into the
  // protected region.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (m_real(y, x) != 0) filled.data.row(y * w + x) = original.data.row(y * w + x);
  return filled;
}

}  // namespace vera
