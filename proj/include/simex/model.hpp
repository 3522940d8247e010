#pragma once

// Concrete networks (symmetric convolutional autoencoder, LeNet-5-style
// classifier), the minibatch training loop, and versioned binary
// checkpoints.
//
// Autoencoder for H x W x 1 input (H == W, H >= 16, H divisible by 4):
//   encoder: conv 6@5x5 same -> relu -> maxpool2
//            -> conv 16@5x5 valid -> relu -> maxpool2
//            -> flatten -> dense -> relu          (bottleneck, width 120)
//   decoder: dense -> relu -> reshape 16 x a x a
//            -> upsample2 -> conv 6@5x5 full (crops to the encoder's
//               pre-pool size) -> relu
//            -> upsample2 -> conv 1@5x5 same -> sigmoid
// The "full" decoder conv expands spatial size by kernel-1, exactly undoing
// the encoder's valid conv; the crop hyperparameter pins the target size.

#include "simex/dataset.hpp"
#include "simex/losses.hpp"
#include "simex/network.hpp"
#include "simex/optimizer.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace simex {

struct TrainConfig {
  OptimizerConfig optimizer = OptimizerConfig::rmsprop();
  LossKind loss = LossKind::mse();
  int epochs = 30;
  int batch_size = 128;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    optimizer.validate();
  }
};

struct ModelMeta {
  std::string kind;        // "autoencoder" | "classifier"
  std::string loss;        // loss kind name used in training
  std::string reference_id;
  std::uint64_t seed = 0;
  int epochs_trained = 0;
  int input_h = 0, input_w = 0;
  int num_classes = 0;     // classifiers only
};

template <typename Scalar>
struct AutoencoderModel {
  Network<Scalar> net;
  std::size_t bottleneck_layer = 0;  // layers [0, bottleneck_layer) = encoder+bottleneck
  int bottleneck_width = 0;
  ModelMeta meta;
};

template <typename Scalar>
struct ClassifierModel {
  Network<Scalar> net;  // ends at logits; softmax is applied by predict()
  std::size_t conv_layer_count = 0;  // layers [0, conv_layer_count) are frozen on transfer
  ModelMeta meta;
};

namespace detail {

struct AeDims {
  int h;        // input side
  int p1;       // after first pool
  int v;        // after valid conv
  int p2;       // after second pool
  int flat;     // 16 * p2 * p2
};

inline AeDims ae_dims(int h, int w) {
  if (h != w || h < 16 || h % 4 != 0)
    throw std::invalid_argument(
        "unsupported input shape: need square side >= 16 divisible by 4, got " +
        std::to_string(h) + "x" + std::to_string(w));
  AeDims d;
  d.h = h;
  d.p1 = h / 2;
  d.v = d.p1 - 4;
  d.p2 = d.v / 2;
  d.flat = 16 * d.p2 * d.p2;
  return d;
}

}  // namespace detail

template <typename Scalar = float>
AutoencoderModel<Scalar> build_autoencoder(int h, int w, std::uint64_t seed = 0) {
  const auto d = detail::ae_dims(h, w);
  std::vector<LayerSpec> specs{
      LayerSpec::conv2d(6, 1, 5, PadMode::Same),
      LayerSpec::relu(),
      LayerSpec::maxpool2(),
      LayerSpec::conv2d(16, 6, 5, PadMode::Valid),
      LayerSpec::relu(),
      LayerSpec::maxpool2(),
      LayerSpec::reshape({d.flat}),
      LayerSpec::dense(120, d.flat),
      LayerSpec::relu(),
      // decoder
      LayerSpec::dense(d.flat, 120),
      LayerSpec::relu(),
      LayerSpec::reshape({16, d.p2, d.p2}),
      LayerSpec::upsample2(),
      LayerSpec::conv2d(6, 16, 5, PadMode::Full, d.p1, d.p1),
      LayerSpec::relu(),
      LayerSpec::upsample2(),
      LayerSpec::conv2d(1, 6, 5, PadMode::Same),
      LayerSpec::sigmoid(),
  };
  AutoencoderModel<Scalar> m;
  m.net = Network<Scalar>(std::move(specs));
  m.bottleneck_layer = 9;  // through the relu after the 120-unit dense
  m.bottleneck_width = 120;
  RngStream rng(seed);
  m.net.init(rng);
  m.meta.kind = "autoencoder";
  m.meta.seed = seed;
  m.meta.input_h = h;
  m.meta.input_w = w;
  return m;
}

template <typename Scalar = float>
ClassifierModel<Scalar> build_classifier(int h, int w, int num_classes,
                                         std::uint64_t seed = 0) {
  if (num_classes != 9 && num_classes != 10)
    throw std::invalid_argument("build_classifier: num_classes must be 9 or 10");
  const auto d = detail::ae_dims(h, w);
  std::vector<LayerSpec> specs{
      LayerSpec::conv2d(6, 1, 5, PadMode::Same),
      LayerSpec::relu(),
      LayerSpec::maxpool2(),
      LayerSpec::conv2d(16, 6, 5, PadMode::Valid),
      LayerSpec::relu(),
      LayerSpec::maxpool2(),
      LayerSpec::reshape({d.flat}),
      LayerSpec::dense(120, d.flat),
      LayerSpec::relu(),
      LayerSpec::dense(84, 120),
      LayerSpec::relu(),
      LayerSpec::dense(num_classes, 84),
  };
  ClassifierModel<Scalar> m;
  m.net = Network<Scalar>(std::move(specs));
  m.conv_layer_count = 7;  // everything up to and including the flatten
  RngStream rng(seed);
  m.net.init(rng);
  m.meta.kind = "classifier";
  m.meta.seed = seed;
  m.meta.input_h = h;
  m.meta.input_w = w;
  m.meta.num_classes = num_classes;
  return m;
}

struct TrainResult {
  std::vector<double> epoch_loss;
  double wall_seconds = 0;
};

namespace detail {

// Splits a batched output into per-sample views, evaluates the loss against
// the per-sample targets and assembles the output gradient.
template <typename Scalar>
double batch_loss_and_grad(const Tensor<Scalar>& output, const Tensor<Scalar>& target,
                           const LossKind& loss, Tensor<Scalar>& grad_out) {
  const int n = output.dim(0);
  const Shape ps(output.shape.begin() + 1, output.shape.end());
  const long sz = shape_numel(ps);
  grad_out = Tensor<Scalar>(output.shape);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    Tensor<Scalar> o(ps), t(ps), g;
    o.data = output.data.segment(i * sz, sz);
    t.data = target.data.segment(i * sz, sz);
    total += loss_and_grad(t, o, loss, &g).value;
    grad_out.data.segment(i * sz, sz) = g.data / Scalar(n);
  }
  return total / n;
}

// Softmax cross-entropy over logits; returns mean loss, fills grad.
template <typename Scalar>
double softmax_xent(const Tensor<Scalar>& logits, const std::vector<int>& labels,
                    Tensor<Scalar>& grad_out) {
  const int n = logits.dim(0), c = logits.dim(1);
  grad_out = Tensor<Scalar>(logits.shape);
  double total = 0;
  for (int i = 0; i < n; ++i) {
    const Scalar* z = logits.data.data() + long(i) * c;
    Scalar* g = grad_out.data.data() + long(i) * c;
    Scalar zmax = z[0];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0;
    for (int j = 0; j < c; ++j) sum += std::exp(double(z[j] - zmax));
    const int y = labels[static_cast<std::size_t>(i)];
    total -= double(z[y] - zmax) - std::log(sum);
    for (int j = 0; j < c; ++j) {
      const double p = std::exp(double(z[j] - zmax)) / sum;
      g[long(j)] = Scalar((p - (j == y ? 1.0 : 0.0)) / n);
    }
  }
  return total / n;
}

template <typename Scalar>
std::vector<int> batch_indices(int begin, int end, const std::vector<std::size_t>& order) {
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(end - begin));
  for (int i = begin; i < end; ++i) idx.push_back(int(order[static_cast<std::size_t>(i)]));
  return idx;
}

}  // namespace detail

// Reconstruction training core: target == input. Optimizer and shuffle
// state live with the caller so training can pause and resume (ordering
// convergence checks) without resetting accumulators.
template <typename Scalar>
TrainResult train_epochs(AutoencoderModel<Scalar>& model, const Dataset& data,
                         const TrainConfig& cfg, OptimizerState<Scalar>& opt,
                         RngStream& shuffler) {
  cfg.validate();
  if (data.n == 0) throw std::invalid_argument("train: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  model.meta.loss = loss_name(cfg.loss.id);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(static_cast<std::size_t>(data.n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) shuffler.shuffle(order);

    double epoch_total = 0;
    int batches = 0;
    for (int b = 0; b < data.n; b += cfg.batch_size, ++batches) {
      const int e = std::min(data.n, b + cfg.batch_size);
      const auto idx = detail::batch_indices<Scalar>(b, e, order);
      Tensor<Scalar> x = data.batch<Scalar>(idx);
      Tensor<Scalar> out = model.net.forward_cached(x);
      // the loss compares per-sample HxW images; drop the channel dim view
      Tensor<Scalar> gout;
      Tensor<Scalar> out2(Shape{out.dim(0), out.dim(2), out.dim(3)}, out.data);
      Tensor<Scalar> x2(Shape{x.dim(0), x.dim(2), x.dim(3)}, x.data);
      const double loss = detail::batch_loss_and_grad(out2, x2, cfg.loss, gout);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch));
      epoch_total += loss;
      Tensor<Scalar> gout4(out.shape, gout.data);
      std::vector<Tensor<Scalar>> grads;
      model.net.backward(gout4, grads);
      opt.step(model.net.params(), grads);
    }
    res.epoch_loss.push_back(epoch_total / std::max(1, batches));
    ++model.meta.epochs_trained;
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

template <typename Scalar>
TrainResult train(AutoencoderModel<Scalar>& model, const Dataset& data,
                  const TrainConfig& cfg) {
  OptimizerState<Scalar> opt(cfg.optimizer, model.net.params());
  RngStream shuffler(RngStream(cfg.seed).derive(0));
  return train_epochs(model, data, cfg, opt, shuffler);
}

// Classifier training with softmax cross-entropy. first_trainable_layer > 0
// freezes the prefix (transfer learning).
template <typename Scalar>
TrainResult train(ClassifierModel<Scalar>& model, const Dataset& data,
                  const TrainConfig& cfg, std::size_t first_trainable_layer = 0) {
  cfg.validate();
  if (data.n == 0) throw std::invalid_argument("train: empty dataset");
  if (!data.labeled()) throw std::invalid_argument("train: classifier needs labels");
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res;
  model.meta.loss = "softmax-xent";

  // Only the trainable suffix gets an optimizer slot.
  std::vector<Tensor<Scalar>*> trainable;
  std::vector<bool> trainable_mask;
  {
    auto& layers = model.net.layers();
    for (std::size_t li = 0; li < layers.size(); ++li)
      for (auto& p : layers[li].params) {
        const bool t = li >= first_trainable_layer;
        trainable_mask.push_back(t);
        if (t) trainable.push_back(&p);
      }
  }
  OptimizerState<Scalar> opt(cfg.optimizer, trainable);
  RngStream shuffler(RngStream(cfg.seed).derive(1));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(static_cast<std::size_t>(data.n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg.shuffle) shuffler.shuffle(order);

    double epoch_total = 0;
    int batches = 0;
    for (int b = 0; b < data.n; b += cfg.batch_size, ++batches) {
      const int e = std::min(data.n, b + cfg.batch_size);
      const auto idx = detail::batch_indices<Scalar>(b, e, order);
      Tensor<Scalar> x = data.batch<Scalar>(idx);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (int i : idx) labels.push_back(data.labels[static_cast<std::size_t>(i)]);
      Tensor<Scalar> logits = model.net.forward_cached(x);
      Tensor<Scalar> gout;
      const double loss = detail::softmax_xent(logits, labels, gout);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: non-finite loss at epoch " +
                                 std::to_string(epoch));
      epoch_total += loss;
      std::vector<Tensor<Scalar>> grads;
      model.net.backward(gout, grads);
      std::vector<Tensor<Scalar>> sel;
      for (std::size_t gi = 0; gi < grads.size(); ++gi)
        if (trainable_mask[gi]) sel.push_back(std::move(grads[gi]));
      opt.step(trainable, sel);
    }
    res.epoch_loss.push_back(epoch_total / std::max(1, batches));
    ++model.meta.epochs_trained;
  }
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

template <typename Scalar>
Tensor<Scalar> reconstruct(const AutoencoderModel<Scalar>& model,
                           const Tensor<Scalar>& batch) {
  return model.net.forward(batch);
}

template <typename Scalar>
Tensor<Scalar> bottleneck_embed(const AutoencoderModel<Scalar>& model,
                                const Tensor<Scalar>& batch) {
  return model.net.forward_prefix(batch, model.bottleneck_layer);
}

// Softmax probabilities, one row per sample.
template <typename Scalar>
Tensor<Scalar> predict_proba(const ClassifierModel<Scalar>& model,
                             const Tensor<Scalar>& batch) {
  Tensor<Scalar> logits = model.net.forward(batch);
  const int n = logits.dim(0), c = logits.dim(1);
  for (int i = 0; i < n; ++i) {
    Scalar* z = logits.data.data() + long(i) * c;
    Scalar zmax = z[0];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double sum = 0;
    for (int j = 0; j < c; ++j) sum += std::exp(double(z[j] - zmax));
    for (int j = 0; j < c; ++j)
      z[long(j)] = Scalar(std::exp(double(z[j] - zmax)) / sum);
  }
  return logits;
}

}  // namespace simex
