#pragma once

// Strict sequential layer chain with batched forward/backward and a
// central-finite-difference gradient checker.

#include "simex/layer.hpp"
#include "simex/losses.hpp"
#include "simex/rng.hpp"

#include <stdexcept>
#include <vector>

namespace simex {

template <typename Scalar>
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerSpec> specs) {
    for (auto& s : specs) layers_.push_back(Layer<Scalar>{std::move(s), {}});
  }

  std::vector<Layer<Scalar>>& layers() { return layers_; }
  const std::vector<Layer<Scalar>>& layers() const { return layers_; }

  void init(RngStream& rng) {
    for (auto& l : layers_) init_params(l, rng);
  }

  Shape output_shape(const Shape& per_sample_in) const {
    Shape s = per_sample_in;
    for (const auto& l : layers_) s = layer_output_shape(l.spec, s);
    return s;
  }

  std::vector<Tensor<Scalar>*> params() {
    std::vector<Tensor<Scalar>*> out;
    for (auto& l : layers_)
      for (auto& p : l.params) out.push_back(&p);
    return out;
  }
  std::vector<const Tensor<Scalar>*> params() const {
    std::vector<const Tensor<Scalar>*> out;
    for (const auto& l : layers_)
      for (const auto& p : l.params) out.push_back(&p);
    return out;
  }

  long param_count() const {
    long n = 0;
    for (const auto* p : params()) n += p->size();
    return n;
  }

  // Inference-only pass, no caches kept.
  Tensor<Scalar> forward(const Tensor<Scalar>& input) const {
    Tensor<Scalar> x = input;
    ForwardCache<Scalar> cache;
    for (const auto& l : layers_) x = layer_forward(l, x, cache);
    return x;
  }

  // Forward through the first `count` layers (e.g. encoder-only pass).
  Tensor<Scalar> forward_prefix(const Tensor<Scalar>& input, std::size_t count) const {
    Tensor<Scalar> x = input;
    ForwardCache<Scalar> cache;
    for (std::size_t i = 0; i < count && i < layers_.size(); ++i)
      x = layer_forward(layers_[i], x, cache);
    return x;
  }

  // Training pass: caches per layer, then backward from grad at the output.
  // Returns the gradient w.r.t. the input; fills grads (one per parameter,
  // in params() order).
  Tensor<Scalar> forward_cached(const Tensor<Scalar>& input) {
    caches_.resize(layers_.size());
    Tensor<Scalar> x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      x = layer_forward(layers_[i], x, caches_[i]);
    return x;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& grad_output,
                          std::vector<Tensor<Scalar>>& grads) {
    if (caches_.size() != layers_.size())
      throw std::invalid_argument("backward: run forward_cached first");
    grads.clear();
    std::vector<std::vector<Tensor<Scalar>>> per_layer(layers_.size());
    Tensor<Scalar> g = grad_output;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      Tensor<Scalar> gi;
      layer_backward(layers_[i], caches_[i], g, gi, per_layer[i]);
      g = std::move(gi);
    }
    for (auto& pl : per_layer)
      for (auto& t : pl) grads.push_back(std::move(t));
    return g;
  }

  template <typename Other>
  Network<Other> cast() const {
    Network<Other> out;
    for (const auto& l : layers_) out.layers().push_back(l.template cast<Other>());
    return out;
  }

 private:
  std::vector<Layer<Scalar>> layers_;
  std::vector<ForwardCache<Scalar>> caches_;
};

// Max relative error between analytic gradients and central differences of
// the scalar loss, over all parameters (and the input when the network has
// none). 64-bit only; the error is |a - d| / max(|a|, |d|, 1e-12).
inline double finite_difference_check(Network<double>& net, const LossKind& loss,
                                      const Tensor<double>& input,
                                      const Tensor<double>& target,
                                      double epsilon = 1e-5) {
  if (epsilon < 1e-7 || epsilon > 1e-3)
    throw std::invalid_argument("finite_difference_check: epsilon out of [1e-7, 1e-3]");

  auto eval = [&]() {
    const Tensor<double> out = net.forward(input);
    double total = 0;
    const int n = out.dim(0);
    const Shape ps(out.shape.begin() + 1, out.shape.end());
    for (int i = 0; i < n; ++i) {
      Tensor<double> o(ps), t(ps);
      const long sz = o.size();
      o.data = out.data.segment(i * sz, sz);
      t.data = target.data.segment(i * sz, sz);
      total += sample_delta(o, t, loss).value;  // delta(target, output): symmetric shapes
    }
    if (!std::isfinite(total))
      throw std::runtime_error("finite_difference_check: non-finite loss");
    return total / n;
  };

  // Analytic pass: mean over batch of per-sample loss, grad w.r.t. output.
  Tensor<double> out = net.forward_cached(input);
  const int n = out.dim(0);
  const Shape ps(out.shape.begin() + 1, out.shape.end());
  Tensor<double> gout(out.shape);
  for (int i = 0; i < n; ++i) {
    Tensor<double> o(ps), t(ps), g;
    const long sz = o.size();
    o.data = out.data.segment(i * sz, sz);
    t.data = target.data.segment(i * sz, sz);
    // loss is delta(x=t, xhat=o); gradient comes back w.r.t. o
    loss_and_grad(t, o, loss, &g);
    gout.data.segment(i * sz, sz) = g.data / double(n);
  }
  std::vector<Tensor<double>> grads;
  Tensor<double> grad_input = net.backward(gout, grads);

  auto params = net.params();
  double max_err = 0;
  auto check_one = [&](double& slot, double analytic) {
    const double keep = slot;
    slot = keep + epsilon;
    const double up = eval();
    slot = keep - epsilon;
    const double dn = eval();
    slot = keep;
    const double diff = (up - dn) / (2 * epsilon);
    const double err = std::abs(analytic - diff) /
                       std::max({std::abs(analytic), std::abs(diff), 1e-12});
    if (err > max_err) max_err = err;
  };

  if (!params.empty()) {
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      for (long i = 0; i < params[pi]->size(); ++i)
        check_one(params[pi]->data[i], grads[pi].data[i]);
  } else {
    // Param-free chain: check the gradient w.r.t. the input instead.
    Tensor<double> in_copy = input;
    for (long i = 0; i < in_copy.size(); ++i) {
      const double keep = in_copy.data[i];
      auto eval_at = [&](double v) {
        Tensor<double> perturbed = in_copy;
        perturbed.data[i] = v;
        const Tensor<double> o = net.forward(perturbed);
        double total = 0;
        for (int bi = 0; bi < n; ++bi) {
          Tensor<double> ob(ps), tb(ps);
          const long sz = ob.size();
          ob.data = o.data.segment(bi * sz, sz);
          tb.data = target.data.segment(bi * sz, sz);
          total += sample_delta(tb, ob, LossKind{loss}).value;
        }
        return total / n;
      };
      const double up = eval_at(keep + epsilon);
      const double dn = eval_at(keep - epsilon);
      const double diff = (up - dn) / (2 * epsilon);
      const double analytic = grad_input.data[i];
      const double err = std::abs(analytic - diff) /
                         std::max({std::abs(analytic), std::abs(diff), 1e-12});
      if (err > max_err) max_err = err;
    }
  }
  return max_err;
}

}  // namespace simex
