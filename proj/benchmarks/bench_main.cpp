#include <benchmark/benchmark.h>

#include <vector>

#include "latentplan/config.hpp"
#include "latentplan/geom.hpp"
#include "latentplan/grpo.hpp"
#include "latentplan/imitation.hpp"
#include "latentplan/model.hpp"
#include "latentplan/rng.hpp"
#include "latentplan/world.hpp"

namespace {

using namespace latentplan;

// Desk-scale experiment shapes; the same sizes the CLI defaults to.
const config::ExperimentConfig& experiment() {
  static const config::ExperimentConfig cfg = config::desk_scale();
  return cfg;
}

const model::Model& shared_model() {
  static const model::Model m(experiment().model);
  return m;
}

const world::Scenario& shared_scenario() {
  static const world::Scenario s = world::generate_scenario(
      42, world::Difficulty::kMedium, experiment().generator);
  return s;
}

const std::vector<double>& shared_params() {
  static const std::vector<double> p = shared_model().init_params(1);
  return p;
}

void bm_obb_overlap(benchmark::State& state) {
  Rng rng(3, "bench.obb");
  std::vector<std::pair<geom::OrientedBox, geom::OrientedBox>> pairs;
  for (int i = 0; i < 256; ++i) {
    geom::OrientedBox a{{rng.uniform(-10, 10), rng.uniform(-10, 10)},
                        {rng.uniform(0.5, 3), rng.uniform(0.5, 2)},
                        rng.uniform(-3.1, 3.1)};
    geom::OrientedBox b{{rng.uniform(-10, 10), rng.uniform(-10, 10)},
                        {rng.uniform(0.5, 3), rng.uniform(0.5, 2)},
                        rng.uniform(-3.1, 3.1)};
    pairs.emplace_back(a, b);
  }
  size_t i = 0;
  for (auto _ : state) {
    const auto& [a, b] = pairs[i++ & 255];
    benchmark::DoNotOptimize(geom::obb_overlap(a, b));
  }
}
BENCHMARK(bm_obb_overlap);

void bm_rasterize(benchmark::State& state) {
  const auto& s = shared_scenario();
  const auto grid = experiment().model.grid;
  for (auto _ : state) {
    benchmark::DoNotOptimize(world::rasterize(s, grid));
  }
}
BENCHMARK(bm_rasterize);

void bm_encode(benchmark::State& state) {
  const auto& m = shared_model();
  const auto& s = shared_scenario();
  const auto& p = shared_params();
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.encode(s, p));
  }
}
BENCHMARK(bm_encode);

// Full hierarchical plan at each refinement depth.
void bm_plan(benchmark::State& state) {
  const auto& m = shared_model();
  const auto& s = shared_scenario();
  const auto& p = shared_params();
  const int iters = int(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.plan(s, p, iters));
  }
}
BENCHMARK(bm_plan)->Arg(0)->Arg(1)->Arg(3)->Arg(6);

void bm_pretrain_step(benchmark::State& state) {
  const auto& m = shared_model();
  const auto& s = shared_scenario();
  const auto& p = shared_params();
  const auto cfg = experiment().pretrain;
  for (auto _ : state) {
    nnet::Tape t(p);
    const auto nodes = imitation::loss_on_tape(t, m, s, cfg);
    t.backward(nodes.total);
    benchmark::DoNotOptimize(t.val(nodes.total));
  }
}
BENCHMARK(bm_pretrain_step);

// One full fine-tuning step: sample a rollout group, score it, build
// the loss graph, and apply the update.
void bm_rft_step(benchmark::State& state) {
  const auto& m = shared_model();
  auto cfg = experiment().rft;
  cfg.group_size = int(state.range(0));
  const std::vector<world::Scenario> batch{shared_scenario()};
  for (auto _ : state) {
    auto params = shared_params();
    auto opt = nnet::OptimizerState::adam(cfg.learning_rate, params.size());
    Rng rng(7, "bench.rft");
    benchmark::DoNotOptimize(grpo::rft_step(m, batch, params, opt,
                                            shared_params(), shared_params(),
                                            cfg, rng));
  }
}
BENCHMARK(bm_rft_step)->Arg(5)->Arg(10)->Arg(15);

}  // namespace

BENCHMARK_MAIN();
