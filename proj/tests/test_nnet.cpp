#include <cmath>
#include <vector>

#include "doctest.h"
#include "latentplan/nnet.hpp"
#include "oracles.hpp"

using namespace latentplan;
using nnet::Activation;
using nnet::DenseNet;
using nnet::Mat;
using nnet::OptimizerState;

TEST_SUITE("nnet") {

TEST_CASE("parameter counts follow the flat layout") {
  DenseNet net{{3, 5, 2}};
  CHECK(net.param_count() == 3 * 5 + 5 + 5 * 2 + 2);
  CHECK(net.last_layer_count() == 5 * 2 + 2);
  CHECK(net.last_layer_offset() == 3 * 5 + 5);
}

TEST_CASE("xavier init respects fan bounds and zeroes biases") {
  DenseNet net{{4, 6, 3}};
  std::vector<double> p(net.param_count());
  Rng rng(123, "init");
  net.init_params(p, rng);
  const double bound1 = std::sqrt(6.0 / (4 + 6));
  for (int k = 0; k < 24; ++k) CHECK(std::abs(p[k]) <= bound1);
  for (int k = 24; k < 30; ++k) CHECK(p[k] == 0.0);  // first bias block
  const double bound2 = std::sqrt(6.0 / (6 + 3));
  for (int k = 30; k < 48; ++k) CHECK(std::abs(p[k]) <= bound2);
  for (int k = 48; k < 51; ++k) CHECK(p[k] == 0.0);
  // Weights actually vary.
  CHECK(p[0] != p[1]);
}

TEST_CASE("flatten and unflatten are inverse") {
  DenseNet net{{2, 4, 3}};
  std::vector<double> p(net.param_count());
  Rng rng(5, "flatten");
  for (double& x : p) x = rng.normal();
  const std::vector<Mat> layers = nnet::unflatten(net, p);
  REQUIRE(layers.size() == 4);
  CHECK(layers[0].rows == 4);
  CHECK(layers[0].cols == 2);
  CHECK(layers[1].cols == 4);
  const std::vector<double> back = nnet::flatten(net, layers);
  CHECK(back == p);
}

TEST_CASE("network gradients match finite differences on seeded fixtures") {
  for (int fixture = 0; fixture < 20; ++fixture) {
    Rng rng(1000 + fixture, "nnet.fd");
    const int in = 2 + rng.uniform_int(4);
    const int hidden = 3 + rng.uniform_int(5);
    const int out = 1 + rng.uniform_int(3);
    DenseNet net{{in, hidden, hidden, out},
                 fixture % 2 == 0 ? Activation::kTanh : Activation::kRelu};
    std::vector<double> params(net.param_count());
    net.init_params(params, rng);
    std::vector<double> input(in);
    for (double& x : input) x = rng.normal();
    std::vector<double> seed(out);
    for (double& x : seed) x = rng.normal();

    nnet::GradTape tape = nnet::forward(net, params, input);
    auto [pg, ig] = nnet::backward(tape, seed);

    auto loss = [&](std::span<const double> p, std::span<const double> xin) {
      nnet::GradTape t2 = nnet::forward(net, p, xin);
      double acc = 0.0;
      const auto y = t2.output();
      for (size_t k = 0; k < y.size(); ++k) acc += y[k] * seed[k];
      return acc;
    };

    // Probe a deterministic subset of parameters plus all inputs.
    const double h = 1e-5;
    for (size_t k = 0; k < params.size(); k += 1 + params.size() / 25) {
      std::vector<double> p2 = params;
      p2[k] += h;
      const double fp = loss(p2, input);
      p2[k] = params[k] - h;
      const double fm = loss(p2, input);
      const double fd = (fp - fm) / (2.0 * h);
      CHECK_MESSAGE(oracles::grad_close(pg[k], fd),
                    "fixture " << fixture << " param " << k);
    }
    for (size_t k = 0; k < input.size(); ++k) {
      std::vector<double> x2 = input;
      x2[k] += h;
      const double fp = loss(params, x2);
      x2[k] = input[k] - h;
      const double fm = loss(params, x2);
      const double fd = (fp - fm) / (2.0 * h);
      CHECK_MESSAGE(oracles::grad_close(ig[k], fd),
                    "fixture " << fixture << " input " << k);
    }
  }
}

TEST_CASE("a tape backs up exactly once") {
  DenseNet net{{2, 3, 1}};
  std::vector<double> params(net.param_count(), 0.1);
  const std::vector<double> input{0.5, -0.5};
  nnet::GradTape tape = nnet::forward(net, params, input);
  const std::vector<double> seed{1.0};
  (void)nnet::backward(tape, seed);
  CHECK_THROWS_AS(nnet::backward(tape, seed), nnet::UsageError);
}

TEST_CASE("sgd steps along the negative gradient") {
  OptimizerState opt = OptimizerState::sgd(0.1);
  std::vector<double> params{1.0, -2.0};
  const std::vector<double> grads{0.5, -1.0};
  nnet::apply_step(opt, params, grads);
  CHECK(params[0] == doctest::Approx(0.95));
  CHECK(params[1] == doctest::Approx(-1.9));
  CHECK(opt.step_count == 1);
}

TEST_CASE("adam matches a hand-rolled reference for two steps") {
  OptimizerState opt = OptimizerState::adam(0.01, 2);
  std::vector<double> params{0.3, -0.7};
  std::vector<double> ref = params;
  double m[2] = {0, 0};
  double v[2] = {0, 0};
  const std::vector<std::vector<double>> grads{{0.2, -0.4}, {-0.1, 0.3}};
  for (int step = 1; step <= 2; ++step) {
    nnet::apply_step(opt, params, grads[step - 1]);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[step - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mhat = m[i] / (1.0 - std::pow(0.9, step));
      const double vhat = v[i] / (1.0 - std::pow(0.999, step));
      ref[i] -= 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    }
  }
  CHECK(params[0] == doctest::Approx(ref[0]).epsilon(1e-12));
  CHECK(params[1] == doctest::Approx(ref[1]).epsilon(1e-12));
}

TEST_CASE("non-finite gradients abort the step untouched") {
  OptimizerState opt = OptimizerState::adam(0.01, 2);
  std::vector<double> params{1.0, 2.0};
  const std::vector<double> bad{0.1, std::nan("")};
  CHECK_THROWS_AS(nnet::apply_step(opt, params, bad), nnet::NumericsError);
  CHECK(params[0] == 1.0);
  CHECK(params[1] == 2.0);
  CHECK(opt.step_count == 0);
  CHECK(opt.m[0] == 0.0);
}

TEST_CASE("param layout hands out disjoint named ranges") {
  nnet::ParamLayout layout;
  CHECK(layout.add("world.encoder", 10) == 0);
  CHECK(layout.add("planner.query", 4) == 10);
  CHECK(layout.total() == 14);
  CHECK(layout.find("planner.query").offset == 10);
  CHECK(layout.find("planner.query").count == 4);
  CHECK_THROWS_AS(layout.find("missing"), nnet::UsageError);
  CHECK_THROWS_AS(layout.add("world.encoder", 3), nnet::UsageError);
}

}  // TEST_SUITE
