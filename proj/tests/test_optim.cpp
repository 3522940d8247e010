#include "doctest.h"

#include "simex/optimizer.hpp"

#include <cmath>
#include <vector>

using namespace simex;

namespace {

// One scalar parameter makes the update recursions easy to hand-check.
struct ScalarParam {
  Tensor<double> w;
  ScalarParam(double v) : w({1}) { w.data[0] = v; }
  std::vector<Tensor<double>*> params() { return {&w}; }
};

Tensor<double> grad1(double g) { return Tensor<double>::from_values({1}, {g}); }

}  // namespace

TEST_CASE("zero gradient leaves parameters untouched for every optimizer") {
  for (const auto cfg : {OptimizerConfig::sgd_momentum(), OptimizerConfig::rmsprop(),
                         OptimizerConfig::adadelta(), OptimizerConfig::adam()}) {
    ScalarParam p(1.25);
    OptimizerState<double> opt(cfg, p.params());
    for (int i = 0; i < 5; ++i) opt.step(p.params(), {grad1(0.0)});
    CHECK(p.w.data[0] == 1.25);
  }
}

TEST_CASE("rmsprop first step with unit gradient") {
  // acc = 0.1*1, update = lr / sqrt(0.1 + eps); with lr=1e-3 the parameter
  // moves from 1 to about 0.996838
  ScalarParam p(1.0);
  OptimizerState<double> opt(OptimizerConfig::rmsprop(1e-3), p.params());
  opt.step(p.params(), {grad1(1.0)});
  const double expected = 1.0 - 1e-3 / std::sqrt(0.1 + 1e-8);
  CHECK(p.w.data[0] == doctest::Approx(expected).epsilon(1e-12));
  CHECK(p.w.data[0] == doctest::Approx(0.996838).epsilon(1e-6));
}

TEST_CASE("sgd momentum velocity recursion") {
  // lr=0.1, mu=0.9, g=1 each step: v1=1, v2=1.9 so steps are -0.1 then -0.19
  ScalarParam p(0.0);
  OptimizerState<double> opt(OptimizerConfig::sgd_momentum(0.1), p.params());
  opt.step(p.params(), {grad1(1.0)});
  CHECK(p.w.data[0] == doctest::Approx(-0.1).epsilon(1e-12));
  opt.step(p.params(), {grad1(1.0)});
  CHECK(p.w.data[0] == doctest::Approx(-0.29).epsilon(1e-12));
}

TEST_CASE("adam bias-corrected first step moves by about lr") {
  ScalarParam p(0.0);
  OptimizerState<double> opt(OptimizerConfig::adam(1e-3), p.params());
  opt.step(p.params(), {grad1(0.5)});
  // m-hat = g, v-hat = g^2, so the step is lr * g / (|g| + eps)
  const double expected = -1e-3 * 0.5 / (0.5 + 1e-8);
  CHECK(p.w.data[0] == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("adadelta update uses the running delta accumulator") {
  ScalarParam p(0.0);
  OptimizerState<double> opt(OptimizerConfig::adadelta(), p.params());
  opt.step(p.params(), {grad1(2.0)});
  // acc1 = 0.05*4, delta = -sqrt(eps)/sqrt(0.2+eps) * 2
  const double delta = -std::sqrt(1e-6) / std::sqrt(0.2 + 1e-6) * 2.0;
  CHECK(p.w.data[0] == doctest::Approx(delta).epsilon(1e-9));
  CHECK(opt.slot2()[0].data[0] == doctest::Approx(0.05 * delta * delta).epsilon(1e-9));
}

TEST_CASE("all optimizers reduce a quadratic objective") {
  for (const auto cfg :
       {OptimizerConfig::sgd_momentum(0.05), OptimizerConfig::rmsprop(0.05),
        OptimizerConfig::adadelta(1.0), OptimizerConfig::adam(0.05)}) {
    ScalarParam p(3.0);
    OptimizerState<double> opt(cfg, p.params());
    for (int i = 0; i < 1500; ++i) opt.step(p.params(), {grad1(2.0 * p.w.data[0])});
    CHECK(std::abs(p.w.data[0]) < std::abs(3.0) * 0.5);
  }
}

TEST_CASE("optimizer input validation") {
  ScalarParam p(0.0);
  OptimizerState<double> opt(OptimizerConfig::adam(), p.params());

  CHECK_THROWS_AS(opt.step(p.params(), {}), std::invalid_argument);

  Tensor<double> bad_shape({2});
  CHECK_THROWS_AS(opt.step(p.params(), {bad_shape}), std::invalid_argument);

  Tensor<double> nan_grad({1});
  nan_grad.data[0] = std::nan("");
  CHECK_THROWS_AS(opt.step(p.params(), {nan_grad}), std::runtime_error);

  CHECK_THROWS_AS(OptimizerState<double>(OptimizerConfig::rmsprop(-1.0), p.params()),
                  std::invalid_argument);
}

TEST_CASE("step count tracks calls") {
  ScalarParam p(0.0);
  OptimizerState<double> opt(OptimizerConfig::rmsprop(), p.params());
  CHECK(opt.step_count() == 0);
  opt.step(p.params(), {grad1(1.0)});
  opt.step(p.params(), {grad1(1.0)});
  CHECK(opt.step_count() == 2);
}
