#include <cmath>

#include "doctest.h"
#include "latentplan/model.hpp"
#include "oracles.hpp"

using namespace latentplan;
using model::Model;
using model::ModelConfig;
using world::Command;
using world::Difficulty;

namespace {

ModelConfig small_model_config() {
  ModelConfig cfg;
  cfg.grid = {{-8.0, -8.0}, 2.0, 8, 8};
  cfg.world.channels = 4;
  cfg.world.encoder_hidden = 6;
  cfg.world.decoder_hidden = 6;
  cfg.world.horizon_steps = 6;
  cfg.plan.query_dim = 8;
  cfg.plan.key_dim = 6;
  cfg.plan.path_points = 5;
  cfg.plan.traj_steps = 6;
  cfg.plan.refine_iters = 2;
  cfg.plan.state_dim = 6;
  cfg.plan.b_dim = 3;
  cfg.plan.head_hidden = 7;
  cfg.plan.fusion_hidden = 7;
  return cfg;
}

world::Scenario easy_scene() {
  return world::generate_scenario(42, Difficulty::kEasy);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("parameter layout is contiguous: world, planner, variance") {
  Model m(small_model_config());
  const auto& layout = m.layout();
  const auto& w = layout.find("world");
  const auto& p = layout.find("planner");
  const auto& v = layout.find("variance");
  CHECK(w.offset == 0);
  CHECK(w.count == m.world_model().param_count());
  CHECK(p.offset == w.count);
  CHECK(p.count == m.plan_head().param_count());
  CHECK(v.offset == p.offset + p.count);
  CHECK(v.count == m.variance_net().param_count());
  CHECK(m.param_count() == w.count + p.count + v.count);
}

TEST_CASE("initialization is a pure function of the seed") {
  Model m(small_model_config());
  const auto a = m.init_params(7);
  const auto b = m.init_params(7);
  const auto c = m.init_params(8);
  CHECK(a == b);
  CHECK(a != c);
  REQUIRE(a.size() == m.param_count());

  // Fresh refinement heads are exactly zero, so extra sweeps are free.
  const auto s = easy_scene();
  const auto none = m.plan(s, a, 0);
  const auto six = m.plan(s, a, 6);
  CHECK(none.target.mu == six.target.mu);
  CHECK(none.path.points == six.path.points);
  CHECK(none.increments.deltas == six.increments.deltas);
}

TEST_CASE("mismatched world and planner horizons are rejected") {
  auto cfg = small_model_config();
  cfg.plan.traj_steps = 5;
  CHECK_THROWS_AS(Model{cfg}, std::invalid_argument);
}

TEST_CASE("sigma is floored, shaped, and only trains the variance block") {
  Model m(small_model_config());
  const auto params = m.init_params(3);
  const auto s = easy_scene();

  const auto sigma = m.sigma(s, params);
  REQUIRE(sigma.rows == 6);
  REQUIRE(sigma.cols == 2);
  for (double v : sigma.data) CHECK(v >= 1e-4);

  nnet::Tape t(params);
  const auto rollout = m.plan_on_tape(t, s);
  const auto sig = m.sigma_on_tape(t, rollout.plan);
  t.backward(t.sum(sig));
  std::vector<double> grads(params.size(), 0.0);
  t.accumulate_param_grads(grads);

  const auto& v = m.layout().find("variance");
  double outside = 0.0;
  double inside = 0.0;
  for (size_t i = 0; i < grads.size(); ++i) {
    if (i >= v.offset && i < v.offset + v.count)
      inside += std::abs(grads[i]);
    else
      outside += std::abs(grads[i]);
  }
  CHECK(outside == 0.0);
  CHECK(inside > 0.0);
}

TEST_CASE("fresh models start at the configured sampling std everywhere") {
  auto cfg = small_model_config();
  for (const double want : {0.2, 0.3, 0.69}) {
    cfg.plan.sigma_init = want;
    Model m(cfg);
    const auto params = m.init_params(9);
    for (uint64_t seed : {11ull, 57ull}) {
      const auto s = world::generate_scenario(seed, Difficulty::kMedium);
      const auto sigma = m.sigma(s, params);
      for (double v : sigma.data) CHECK(v == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("value-level plan matches the tape rollout") {
  Model m(small_model_config());
  const auto params = m.init_params(12);
  const auto s = easy_scene();

  const auto direct = m.plan(s, params);

  nnet::Tape t(params);
  const auto rollout = m.plan_on_tape(t, s);
  const auto& mu = t.val(rollout.plan.mu);
  CHECK(direct.target.mu.x == mu.at(0, 0));
  CHECK(direct.target.mu.y == mu.at(0, 1));
  const auto& path = t.val(rollout.plan.path);
  for (size_t i = 0; i < direct.path.points.size(); ++i) {
    CHECK(direct.path.points[i].x == path.at(static_cast<int>(i), 0));
    CHECK(direct.path.points[i].y == path.at(static_cast<int>(i), 1));
  }
}

}  // TEST_SUITE
