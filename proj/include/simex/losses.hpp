#pragma once

// Per-sample reconstruction differences: pixel-mean MSE and iSSIM = 1 - SSIM.
// Both come with analytic gradients w.r.t. the reconstruction so they can
// drive training directly.
//
// SSIM uses Gaussian-weighted local moments over an odd square window placed
// at valid positions only (no padding); the per-sample score is the mean of
// the SSIM map.

#include "simex/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace simex {

enum class LossId { Mse, Issim };

inline const char* loss_name(LossId id) {
  return id == LossId::Mse ? "mse" : "issim";
}

inline LossId loss_from_name(const std::string& s) {
  if (s == "mse") return LossId::Mse;
  if (s == "issim") return LossId::Issim;
  throw std::invalid_argument("unknown loss kind: " + s);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;  // L; pixels live in [0,1]

  void validate(int h, int w) const {
    if (window % 2 == 0 || window < 1)
      throw std::invalid_argument("ssim window must be odd and positive");
    if (window > h || window > w)
      throw std::invalid_argument("ssim window larger than image");
    if (k1 <= 0 || k2 <= 0 || dynamic_range <= 0)
      throw std::invalid_argument("ssim constants must be positive");
  }
};

struct LossKind {
  LossId id = LossId::Mse;
  SsimParams ssim;  // used iff id == Issim

  static LossKind mse() { return {LossId::Mse, {}}; }
  static LossKind issim(SsimParams p = {}) { return {LossId::Issim, p}; }
};

template <typename Scalar>
struct SampleDelta {
  Scalar value = 0;
  LossId loss = LossId::Mse;
};

template <typename Scalar>
Scalar mse(const Tensor<Scalar>& x, const Tensor<Scalar>& xhat) {
  require_shape(xhat, x.shape, "mse");
  if (x.size() == 0) throw std::invalid_argument("mse: empty tensors");
  return (x.data - xhat.data).square().mean();
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const double c = (size - 1) / 2.0;
  double sum = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double d2 = (y - c) * (y - c) + (x - c) * (x - c);
      const double v = std::exp(-d2 / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y) * size + x] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace detail

// Mean SSIM over valid window positions of a single-channel image pair.
// When grad is non-null it receives d(meanSSIM)/d(xhat).
template <typename Scalar>
Scalar ssim_index(const Tensor<Scalar>& x, const Tensor<Scalar>& xhat,
                  const SsimParams& p, Tensor<Scalar>* grad = nullptr) {
  require_shape(xhat, x.shape, "ssim_index");
  if (x.rank() != 2 && !(x.rank() == 3 && x.dim(0) == 1))
    throw std::invalid_argument("ssim_index: expected single-channel HxW image");
  const int h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  p.validate(h, w);

  const int k = p.window;
  const std::vector<double> win = detail::gaussian_window(k, p.sigma);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const int oh = h - k + 1, ow = w - k + 1;

  if (grad) {
    *grad = Tensor<Scalar>(x.shape);
  }

  const Scalar* a = x.data.data();
  const Scalar* b = xhat.data.data();
  double total = 0;
  const double inv_windows = 1.0 / (double(oh) * ow);

  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int wy = 0; wy < k; ++wy)
        for (int wx = 0; wx < k; ++wx) {
          const double wt = win[static_cast<std::size_t>(wy) * k + wx];
          const double xv = a[long(oy + wy) * w + ox + wx];
          const double yv = b[long(oy + wy) * w + ox + wx];
          mx += wt * xv;
          my += wt * yv;
          sxx += wt * xv * xv;
          syy += wt * yv * yv;
          sxy += wt * xv * yv;
        }
      const double vx = sxx - mx * mx;
      const double vy = syy - my * my;
      const double cxy = sxy - mx * my;
      const double a1 = 2 * mx * my + c1, a2 = 2 * cxy + c2;
      const double b1 = mx * mx + my * my + c1, b2 = vx + vy + c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;

      if (grad) {
        // Chain rule through (mu_y, var_y, cov_xy); each pixel contributes
        // with its window weight.
        const double ds_dmy = (2 * mx * a2) / (b1 * b2) - (2 * my * a1 * a2) / (b1 * b1 * b2);
        const double ds_dvy = -(a1 * a2) / (b1 * b2 * b2);
        const double ds_dcxy = (2 * a1) / (b1 * b2);
        for (int wy = 0; wy < k; ++wy)
          for (int wx = 0; wx < k; ++wx) {
            const double wt = win[static_cast<std::size_t>(wy) * k + wx];
            const long idx = long(oy + wy) * w + ox + wx;
            const double xv = a[idx], yv = b[idx];
            grad->data[idx] += static_cast<Scalar>(
                inv_windows * wt *
                (ds_dmy + 2 * (yv - my) * ds_dvy + (xv - mx) * ds_dcxy));
          }
      }
    }
  }
  return static_cast<Scalar>(total * inv_windows);
}

// Loss value and gradient w.r.t. xhat for one sample.
template <typename Scalar>
SampleDelta<Scalar> loss_and_grad(const Tensor<Scalar>& x, const Tensor<Scalar>& xhat,
                                  const LossKind& kind, Tensor<Scalar>* grad = nullptr) {
  require_shape(xhat, x.shape, "loss_and_grad");
  SampleDelta<Scalar> out;
  out.loss = kind.id;
  if (kind.id == LossId::Mse) {
    out.value = mse(x, xhat);
    if (grad) {
      *grad = Tensor<Scalar>(
          x.shape, (xhat.data - x.data) * Scalar(2.0 / double(x.size())));
    }
  } else {
    const Scalar s = ssim_index(x, xhat, kind.ssim, grad);
    out.value = Scalar(1) - s;
    if (grad) grad->data = -grad->data;
  }
  return out;
}

template <typename Scalar>
SampleDelta<Scalar> sample_delta(const Tensor<Scalar>& x, const Tensor<Scalar>& xhat,
                                 const LossKind& kind) {
  return loss_and_grad(x, xhat, kind, static_cast<Tensor<Scalar>*>(nullptr));
}

}  // namespace simex
