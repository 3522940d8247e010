#pragma once

// Sequential-network layer zoo: conv2d (same/valid/full padding, optional
// center crop), non-overlapping 2x2 max pooling, nearest-neighbor x2
// upsampling, dense, relu, sigmoid, reshape.
//
// All tensors carry the batch as their leading dimension. Convolutions run
// as im2col + one Eigen matrix product per sample; the column matrices are
// kept in the forward cache and reused by the backward pass.

#include "simex/rng.hpp"
#include "simex/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace simex {

enum class LayerKind { Conv2d, MaxPool2, Upsample2, Dense, Relu, Sigmoid, Reshape };

enum class PadMode { Same, Valid, Full };

struct LayerSpec {
  LayerKind kind;

  // conv2d
  int out_channels = 0, in_channels = 0, kh = 0, kw = 0;
  PadMode pad = PadMode::Same;
  int crop_h = 0, crop_w = 0;  // 0 = no crop; otherwise center crop to HxW

  // dense
  int out_units = 0, in_units = 0;

  // reshape (per-sample target shape)
  Shape target;

  static LayerSpec conv2d(int out_c, int in_c, int k, PadMode pad,
                          int crop_h = 0, int crop_w = 0) {
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.out_channels = out_c;
    s.in_channels = in_c;
    s.kh = s.kw = k;
    s.pad = pad;
    s.crop_h = crop_h;
    s.crop_w = crop_w;
    return s;
  }
  static LayerSpec maxpool2() { return LayerSpec{LayerKind::MaxPool2}; }
  static LayerSpec upsample2() { return LayerSpec{LayerKind::Upsample2}; }
  static LayerSpec dense(int out_u, int in_u) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.out_units = out_u;
    s.in_units = in_u;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{LayerKind::Relu}; }
  static LayerSpec sigmoid() { return LayerSpec{LayerKind::Sigmoid}; }
  static LayerSpec reshape(Shape per_sample) {
    LayerSpec s;
    s.kind = LayerKind::Reshape;
    s.target = std::move(per_sample);
    return s;
  }
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2: return "maxpool2";
    case LayerKind::Upsample2: return "upsample2";
    case LayerKind::Dense: return "dense";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Reshape: return "reshape";
  }
  return "?";
}

namespace detail {

inline void conv_pads(const LayerSpec& s, int& pt, int& pb, int& pl, int& pr) {
  switch (s.pad) {
    case PadMode::Same:
      pt = (s.kh - 1) / 2; pb = s.kh - 1 - pt;
      pl = (s.kw - 1) / 2; pr = s.kw - 1 - pl;
      break;
    case PadMode::Valid:
      pt = pb = pl = pr = 0;
      break;
    case PadMode::Full:
      pt = pb = s.kh - 1;
      pl = pr = s.kw - 1;
      break;
  }
}

}  // namespace detail

// Per-sample output shape as a pure function of the per-sample input shape.
inline Shape layer_output_shape(const LayerSpec& s, const Shape& in) {
  auto bad = [&](const std::string& why) {
    throw std::invalid_argument(std::string(layer_kind_name(s.kind)) + ": " +
                                why + " (input shape " + shape_str(in) + ")");
  };
  switch (s.kind) {
    case LayerKind::Conv2d: {
      if (in.size() != 3) bad("expected (C,H,W) input");
      if (in[0] != s.in_channels) bad("channel mismatch");
      int pt, pb, pl, pr;
      detail::conv_pads(s, pt, pb, pl, pr);
      const int oh = in[1] + pt + pb - s.kh + 1;
      const int ow = in[2] + pl + pr - s.kw + 1;
      if (oh <= 0 || ow <= 0) bad("kernel larger than padded input");
      if (s.crop_h > 0) {
        if (s.crop_h > oh || s.crop_w > ow) bad("crop larger than conv output");
        return {s.out_channels, s.crop_h, s.crop_w};
      }
      return {s.out_channels, oh, ow};
    }
    case LayerKind::MaxPool2: {
      if (in.size() != 3) bad("expected (C,H,W) input");
      if (in[1] < 2 || in[2] < 2) bad("input smaller than pooling window");
      return {in[0], in[1] / 2, in[2] / 2};
    }
    case LayerKind::Upsample2: {
      if (in.size() != 3) bad("expected (C,H,W) input");
      return {in[0], in[1] * 2, in[2] * 2};
    }
    case LayerKind::Dense: {
      if (in.size() != 1) bad("expected flat input, insert a reshape");
      if (in[0] != s.in_units) bad("unit count mismatch");
      return {s.out_units};
    }
    case LayerKind::Relu:
    case LayerKind::Sigmoid:
      return in;
    case LayerKind::Reshape: {
      if (shape_numel(in) != shape_numel(s.target)) bad("element count mismatch");
      return s.target;
    }
  }
  bad("unknown layer kind");
  return {};
}

template <typename Scalar>
struct Layer {
  LayerSpec spec;
  std::vector<Tensor<Scalar>> params;  // conv/dense: {weight, bias}; else empty

  bool has_params() const {
    return spec.kind == LayerKind::Conv2d || spec.kind == LayerKind::Dense;
  }

  template <typename Other>
  Layer<Other> cast() const {
    Layer<Other> out;
    out.spec = spec;
    for (const auto& p : params) out.params.push_back(p.template cast<Other>());
    return out;
  }
};

// Glorot-uniform weights, zero biases. Weight slots are allocated here so a
// layer is usable right after construction + init.
template <typename Scalar>
void init_params(Layer<Scalar>& layer, RngStream& rng) {
  const LayerSpec& s = layer.spec;
  layer.params.clear();
  if (s.kind == LayerKind::Conv2d) {
    Tensor<Scalar> w({s.out_channels, s.in_channels, s.kh, s.kw});
    const double fan_in = double(s.in_channels) * s.kh * s.kw;
    const double fan_out = double(s.out_channels) * s.kh * s.kw;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (long i = 0; i < w.size(); ++i)
      w[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    layer.params.push_back(std::move(w));
    layer.params.emplace_back(Shape{s.out_channels});
  } else if (s.kind == LayerKind::Dense) {
    Tensor<Scalar> w({s.out_units, s.in_units});
    const double bound = std::sqrt(6.0 / (double(s.in_units) + s.out_units));
    for (long i = 0; i < w.size(); ++i)
      w[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
    layer.params.push_back(std::move(w));
    layer.params.emplace_back(Shape{s.out_units});
  }
}

template <typename Scalar>
struct ForwardCache {
  Shape input_shape;                 // full (N,...) shape
  Tensor<Scalar> input;              // conv/dense/relu keep their input
  Tensor<Scalar> output;             // sigmoid keeps its output
  Tensor<Scalar> cols;               // conv: im2col matrices, all samples
  std::vector<long> argmax;          // maxpool: flat input index per output
  bool valid = false;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> conv2d_forward(const Layer<Scalar>& layer,
                              const Tensor<Scalar>& input,
                              ForwardCache<Scalar>& cache) {
  const LayerSpec& s = layer.spec;
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  int pt, pb, pl, pr;
  conv_pads(s, pt, pb, pl, pr);
  const int fh = h + pt + pb - s.kh + 1;  // full (pre-crop) output
  const int fw = w + pl + pr - s.kw + 1;
  const long patch = long(c) * s.kh * s.kw;

  // im2col for all samples: (N * fh*fw) rows laid out sample-major.
  cache.cols = Tensor<Scalar>({n, int(patch), fh * fw});
  Scalar* cols = cache.cols.data.data();
  const Scalar* in = input.data.data();
  for (int ni = 0; ni < n; ++ni) {
    Scalar* col_n = cols + long(ni) * patch * fh * fw;
    const Scalar* in_n = in + long(ni) * c * h * w;
    long row = 0;
    for (int ci = 0; ci < c; ++ci) {
      const Scalar* plane = in_n + long(ci) * h * w;
      for (int ky = 0; ky < s.kh; ++ky) {
        for (int kx = 0; kx < s.kw; ++kx, ++row) {
          Scalar* dst = col_n + row * fh * fw;
          for (int oy = 0; oy < fh; ++oy) {
            const int iy = oy - pt + ky;
            if (iy < 0 || iy >= h) {
              std::fill(dst + long(oy) * fw, dst + long(oy + 1) * fw, Scalar(0));
              continue;
            }
            for (int ox = 0; ox < fw; ++ox) {
              const int ix = ox - pl + kx;
              dst[long(oy) * fw + ox] =
                  (ix < 0 || ix >= w) ? Scalar(0) : plane[long(iy) * w + ix];
            }
          }
        }
      }
    }
  }

  const auto wmat = layer.params[0].as_matrix(s.out_channels, patch);
  const auto& bias = layer.params[1].data;

  Tensor<Scalar> full({n, s.out_channels, fh, fw});
  for (int ni = 0; ni < n; ++ni) {
    auto col_n = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic,
                                                Eigen::Dynamic, Eigen::RowMajor>>(
        cols + long(ni) * patch * fh * fw, patch, long(fh) * fw);
    auto out_n = Eigen::Map<
        Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        full.data.data() + long(ni) * s.out_channels * fh * fw, s.out_channels,
        long(fh) * fw);
    out_n.noalias() = wmat * col_n;
    out_n.colwise() += Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(
        bias.data(), s.out_channels);
  }

  if (s.crop_h == 0) return full;

  // Deterministic center crop (offsets floor((full - crop) / 2)).
  const int oy0 = (fh - s.crop_h) / 2, ox0 = (fw - s.crop_w) / 2;
  Tensor<Scalar> out({n, s.out_channels, s.crop_h, s.crop_w});
  for (int ni = 0; ni < n; ++ni)
    for (int oc = 0; oc < s.out_channels; ++oc)
      for (int oy = 0; oy < s.crop_h; ++oy) {
        const Scalar* src = full.data.data() +
                            ((long(ni) * s.out_channels + oc) * fh + oy0 + oy) * fw + ox0;
        Scalar* dst = out.data.data() +
                      ((long(ni) * s.out_channels + oc) * s.crop_h + oy) * s.crop_w;
        std::copy(src, src + s.crop_w, dst);
      }
  return out;
}

template <typename Scalar>
void conv2d_backward(const Layer<Scalar>& layer, const ForwardCache<Scalar>& cache,
                     const Tensor<Scalar>& grad_output, Tensor<Scalar>& grad_input,
                     std::vector<Tensor<Scalar>>& grad_params) {
  const LayerSpec& s = layer.spec;
  const Shape& ish = cache.input_shape;
  const int n = ish[0], c = ish[1], h = ish[2], w = ish[3];
  int pt, pb, pl, pr;
  conv_pads(s, pt, pb, pl, pr);
  const int fh = h + pt + pb - s.kh + 1;
  const int fw = w + pl + pr - s.kw + 1;
  const long patch = long(c) * s.kh * s.kw;

  // Undo the crop: scatter grad_output into the full-size conv output grad.
  const Tensor<Scalar>* go = &grad_output;
  Tensor<Scalar> uncropped;
  if (s.crop_h > 0) {
    const int oy0 = (fh - s.crop_h) / 2, ox0 = (fw - s.crop_w) / 2;
    uncropped = Tensor<Scalar>({n, s.out_channels, fh, fw});
    for (int ni = 0; ni < n; ++ni)
      for (int oc = 0; oc < s.out_channels; ++oc)
        for (int oy = 0; oy < s.crop_h; ++oy) {
          const Scalar* src = grad_output.data.data() +
                              ((long(ni) * s.out_channels + oc) * s.crop_h + oy) * s.crop_w;
          Scalar* dst = uncropped.data.data() +
                        ((long(ni) * s.out_channels + oc) * fh + oy0 + oy) * fw + ox0;
          std::copy(src, src + s.crop_w, dst);
        }
    go = &uncropped;
  }

  grad_params.clear();
  grad_params.emplace_back(Shape{s.out_channels, s.in_channels, s.kh, s.kw});
  grad_params.emplace_back(Shape{s.out_channels});
  auto gw = grad_params[0].as_matrix(s.out_channels, patch);
  auto& gb = grad_params[1].data;

  grad_input = Tensor<Scalar>(ish);
  const auto wmat = layer.params[0].as_matrix(s.out_channels, patch);
  const Scalar* cols = cache.cols.data.data();

  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gcol(
      patch, long(fh) * fw);

  for (int ni = 0; ni < n; ++ni) {
    auto go_n = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic,
                                               Eigen::Dynamic, Eigen::RowMajor>>(
        go->data.data() + long(ni) * s.out_channels * fh * fw, s.out_channels,
        long(fh) * fw);
    auto col_n = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic,
                                                Eigen::Dynamic, Eigen::RowMajor>>(
        cols + long(ni) * patch * fh * fw, patch, long(fh) * fw);
    gw.noalias() += go_n * col_n.transpose();
    Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gb.data(),
                                                         s.out_channels) +=
        go_n.rowwise().sum();
    gcol.noalias() = wmat.transpose() * go_n;

    // col2im scatter-add back through the padding.
    Scalar* gin_n = grad_input.data.data() + long(ni) * c * h * w;
    long row = 0;
    for (int ci = 0; ci < c; ++ci) {
      Scalar* plane = gin_n + long(ci) * h * w;
      for (int ky = 0; ky < s.kh; ++ky) {
        for (int kx = 0; kx < s.kw; ++kx, ++row) {
          const Scalar* src = gcol.data() + row * long(fh) * fw;
          for (int oy = 0; oy < fh; ++oy) {
            const int iy = oy - pt + ky;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < fw; ++ox) {
              const int ix = ox - pl + kx;
              if (ix >= 0 && ix < w) plane[long(iy) * w + ix] += src[long(oy) * fw + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> layer_forward(const Layer<Scalar>& layer, const Tensor<Scalar>& input,
                             ForwardCache<Scalar>& cache) {
  if (input.rank() < 2)
    throw std::invalid_argument("layer input must carry a batch dimension");
  const Shape per_sample(input.shape.begin() + 1, input.shape.end());
  const Shape out_per_sample = layer_output_shape(layer.spec, per_sample);

  cache = ForwardCache<Scalar>{};
  cache.input_shape = input.shape;
  cache.valid = true;

  const int n = input.dim(0);
  Shape out_shape{n};
  out_shape.insert(out_shape.end(), out_per_sample.begin(), out_per_sample.end());

  switch (layer.spec.kind) {
    case LayerKind::Conv2d: {
      cache.input = input;
      return detail::conv2d_forward(layer, input, cache);
    }
    case LayerKind::MaxPool2: {
      const int c = input.dim(1), h = input.dim(2), w = input.dim(3);
      const int oh = h / 2, ow = w / 2;
      Tensor<Scalar> out(out_shape);
      cache.argmax.assign(static_cast<std::size_t>(out.size()), 0);
      long oi = 0;
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          const Scalar* plane = input.data.data() + (long(ni) * c + ci) * h * w;
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox, ++oi) {
              const long base = long(2 * oy) * w + 2 * ox;
              long best = base;
              Scalar bv = plane[base];
              const long cands[3] = {base + 1, base + w, base + w + 1};
              for (long cand : cands)
                if (plane[cand] > bv) { bv = plane[cand]; best = cand; }
              out.data[oi] = bv;
              cache.argmax[static_cast<std::size_t>(oi)] = (long(ni) * c + ci) * h * w + best;
            }
        }
      return out;
    }
    case LayerKind::Upsample2: {
      const int c = input.dim(1), h = input.dim(2), w = input.dim(3);
      Tensor<Scalar> out(out_shape);
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          const Scalar* src = input.data.data() + (long(ni) * c + ci) * h * w;
          Scalar* dst = out.data.data() + (long(ni) * c + ci) * 4L * h * w;
          for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
              dst[long(y) * 2 * w + x] = src[long(y / 2) * w + x / 2];
        }
      return out;
    }
    case LayerKind::Dense: {
      cache.input = input;
      const int f = layer.spec.in_units, u = layer.spec.out_units;
      Tensor<Scalar> out(out_shape);
      auto x = input.as_matrix(n, f);
      auto y = out.as_matrix(n, u);
      y.noalias() = x * layer.params[0].as_matrix(u, f).transpose();
      y.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(
          layer.params[1].data.data(), u);
      return out;
    }
    case LayerKind::Relu: {
      cache.input = input;
      Tensor<Scalar> out(out_shape, input.data.max(Scalar(0)));
      return out;
    }
    case LayerKind::Sigmoid: {
      Tensor<Scalar> out(out_shape,
                         (Scalar(1) / (Scalar(1) + (-input.data).exp())));
      cache.output = out;
      return out;
    }
    case LayerKind::Reshape: {
      Tensor<Scalar> out(out_shape, input.data);
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

template <typename Scalar>
void layer_backward(const Layer<Scalar>& layer, const ForwardCache<Scalar>& cache,
                    const Tensor<Scalar>& grad_output, Tensor<Scalar>& grad_input,
                    std::vector<Tensor<Scalar>>& grad_params) {
  if (!cache.valid) throw std::invalid_argument("layer_backward: missing forward cache");
  const Shape per_sample(cache.input_shape.begin() + 1, cache.input_shape.end());
  Shape expect{cache.input_shape[0]};
  const Shape out_ps = layer_output_shape(layer.spec, per_sample);
  expect.insert(expect.end(), out_ps.begin(), out_ps.end());
  require_shape(grad_output, expect, "layer_backward grad_output");

  grad_params.clear();
  switch (layer.spec.kind) {
    case LayerKind::Conv2d:
      detail::conv2d_backward(layer, cache, grad_output, grad_input, grad_params);
      return;
    case LayerKind::MaxPool2: {
      grad_input = Tensor<Scalar>(cache.input_shape);
      for (long i = 0; i < grad_output.size(); ++i)
        grad_input.data[cache.argmax[static_cast<std::size_t>(i)]] += grad_output.data[i];
      return;
    }
    case LayerKind::Upsample2: {
      grad_input = Tensor<Scalar>(cache.input_shape);
      const int n = cache.input_shape[0], c = cache.input_shape[1];
      const int h = cache.input_shape[2], w = cache.input_shape[3];
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          Scalar* dst = grad_input.data.data() + (long(ni) * c + ci) * h * w;
          const Scalar* src = grad_output.data.data() + (long(ni) * c + ci) * 4L * h * w;
          for (int y = 0; y < 2 * h; ++y)
            for (int x = 0; x < 2 * w; ++x)
              dst[long(y / 2) * w + x / 2] += src[long(y) * 2 * w + x];
        }
      return;
    }
    case LayerKind::Dense: {
      const int n = cache.input_shape[0];
      const int f = layer.spec.in_units, u = layer.spec.out_units;
      grad_params.emplace_back(Shape{u, f});
      grad_params.emplace_back(Shape{u});
      auto go = grad_output.as_matrix(n, u);
      auto x = cache.input.as_matrix(n, f);
      grad_params[0].as_matrix(u, f).noalias() = go.transpose() * x;
      Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(
          grad_params[1].data.data(), u) = go.colwise().sum().transpose();
      grad_input = Tensor<Scalar>(cache.input_shape);
      grad_input.as_matrix(n, f).noalias() = go * layer.params[0].as_matrix(u, f);
      return;
    }
    case LayerKind::Relu: {
      grad_input = Tensor<Scalar>(
          cache.input_shape,
          (cache.input.data > Scalar(0)).select(grad_output.data, Scalar(0)));
      return;
    }
    case LayerKind::Sigmoid: {
      grad_input = Tensor<Scalar>(
          cache.input_shape,
          grad_output.data * cache.output.data * (Scalar(1) - cache.output.data));
      return;
    }
    case LayerKind::Reshape: {
      grad_input = Tensor<Scalar>(cache.input_shape, grad_output.data);
      return;
    }
  }
}

}  // namespace simex
