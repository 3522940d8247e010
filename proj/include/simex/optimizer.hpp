#pragma once

// First-order optimizers over flat parameter lists: SGD with momentum,
// RMSprop, Adadelta, Adam. Accumulators mirror the parameter shapes and the
// update is fully deterministic.

#include "simex/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace simex {

enum class OptimizerId { SgdMomentum, Rmsprop, Adadelta, Adam };

inline const char* optimizer_name(OptimizerId id) {
  switch (id) {
    case OptimizerId::SgdMomentum: return "sgd-momentum";
    case OptimizerId::Rmsprop: return "rmsprop";
    case OptimizerId::Adadelta: return "adadelta";
    case OptimizerId::Adam: return "adam";
  }
  return "?";
}

inline OptimizerId optimizer_from_name(const std::string& s) {
  if (s == "sgd-momentum") return OptimizerId::SgdMomentum;
  if (s == "rmsprop") return OptimizerId::Rmsprop;
  if (s == "adadelta") return OptimizerId::Adadelta;
  if (s == "adam") return OptimizerId::Adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

struct OptimizerConfig {
  OptimizerId id = OptimizerId::Rmsprop;
  double learning_rate = 1e-3;
  double rho = 0.9;       // rmsprop / adadelta decay
  double momentum = 0.9;  // sgd-momentum
  double beta1 = 0.9, beta2 = 0.999;  // adam
  double epsilon = 1e-8;

  static OptimizerConfig rmsprop(double lr = 1e-3) {
    return {OptimizerId::Rmsprop, lr, 0.9, 0.9, 0.9, 0.999, 1e-8};
  }
  static OptimizerConfig adadelta(double lr = 1.0) {
    return {OptimizerId::Adadelta, lr, 0.95, 0.9, 0.9, 0.999, 1e-6};
  }
  static OptimizerConfig adam(double lr = 1e-3) {
    return {OptimizerId::Adam, lr, 0.9, 0.9, 0.9, 0.999, 1e-8};
  }
  static OptimizerConfig sgd_momentum(double lr = 0.1) {
    return {OptimizerId::SgdMomentum, lr, 0.9, 0.9, 0.9, 0.999, 1e-8};
  }

  void validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
  }
};

template <typename Scalar>
class OptimizerState {
 public:
  OptimizerState(OptimizerConfig cfg, const std::vector<Tensor<Scalar>*>& params)
      : cfg_(cfg) {
    cfg_.validate();
    for (const Tensor<Scalar>* p : params) {
      acc1_.emplace_back(p->shape);  // sq-grad avg / momentum / adam m
      acc2_.emplace_back(p->shape);  // adadelta delta acc / adam v
    }
  }

  const OptimizerConfig& config() const { return cfg_; }
  long step_count() const { return step_; }
  const std::vector<Tensor<Scalar>>& slot1() const { return acc1_; }
  const std::vector<Tensor<Scalar>>& slot2() const { return acc2_; }

  void step(const std::vector<Tensor<Scalar>*>& params,
            const std::vector<Tensor<Scalar>>& grads) {
    if (params.size() != acc1_.size() || grads.size() != acc1_.size())
      throw std::invalid_argument("optimizer_step: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i].shape != params[i]->shape)
        throw std::invalid_argument(
            "optimizer_step: gradient shape " + shape_str(grads[i].shape) +
            " does not match parameter shape " + shape_str(params[i]->shape));
      if (!grads[i].all_finite())
        throw std::runtime_error("optimizer_step: non-finite gradient values");
    }
    ++step_;
    const Scalar lr = Scalar(cfg_.learning_rate);
    const Scalar eps = Scalar(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = params[i]->data;
      const auto& g = grads[i].data;
      auto& a1 = acc1_[i].data;
      auto& a2 = acc2_[i].data;
      switch (cfg_.id) {
        case OptimizerId::SgdMomentum:
          a1 = Scalar(cfg_.momentum) * a1 + g;
          w -= lr * a1;
          break;
        case OptimizerId::Rmsprop:
          a1 = Scalar(cfg_.rho) * a1 + Scalar(1 - cfg_.rho) * g.square();
          w -= lr * g / (a1 + eps).sqrt();
          break;
        case OptimizerId::Adadelta: {
          a1 = Scalar(cfg_.rho) * a1 + Scalar(1 - cfg_.rho) * g.square();
          typename Tensor<Scalar>::Array delta =
              -((a2 + eps).sqrt() / (a1 + eps).sqrt()) * g;
          w += lr * delta;
          a2 = Scalar(cfg_.rho) * a2 + Scalar(1 - cfg_.rho) * delta.square();
          break;
        }
        case OptimizerId::Adam: {
          a1 = Scalar(cfg_.beta1) * a1 + Scalar(1 - cfg_.beta1) * g;
          a2 = Scalar(cfg_.beta2) * a2 + Scalar(1 - cfg_.beta2) * g.square();
          const Scalar bc1 = Scalar(1.0 - std::pow(cfg_.beta1, double(step_)));
          const Scalar bc2 = Scalar(1.0 - std::pow(cfg_.beta2, double(step_)));
          w -= lr * (a1 / bc1) / ((a2 / bc2).sqrt() + eps);
          break;
        }
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  long step_ = 0;
  std::vector<Tensor<Scalar>> acc1_, acc2_;
};

}  // namespace simex
