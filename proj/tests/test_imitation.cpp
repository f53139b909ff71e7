#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "latentplan/imitation.hpp"
#include "oracles.hpp"

using namespace latentplan;
using geom::Point2;
using imitation::LossBreakdown;
using imitation::PretrainConfig;
using planner::TargetRegion;
using world::Difficulty;
using world::Scenario;

namespace {

model::ModelConfig tiny_model_config() {
  model::ModelConfig cfg;
  cfg.grid = {{-8.0, -8.0}, 2.0, 8, 8};
  cfg.world.channels = 4;
  cfg.world.encoder_hidden = 6;
  cfg.world.decoder_hidden = 6;
  cfg.plan.query_dim = 8;
  cfg.plan.key_dim = 6;
  cfg.plan.path_points = 5;
  cfg.plan.refine_iters = 2;
  cfg.plan.state_dim = 6;
  cfg.plan.b_dim = 3;
  cfg.plan.head_hidden = 7;
  cfg.plan.fusion_hidden = 7;
  return cfg;
}

std::vector<Scenario> tiny_corpus(int count, Difficulty d = Difficulty::kEasy) {
  std::vector<Scenario> out;
  for (int i = 0; i < count; ++i)
    out.push_back(world::generate_scenario(1000 + i, d));
  return out;
}

}  // namespace

TEST_SUITE("imitation") {

TEST_CASE("laplace likelihood fixtures") {
  TargetRegion unit{{1.0, -2.0}, {0.5, 0.5}};
  CHECK(imitation::laplace_nll({1.0, -2.0}, unit) == 0.0);

  TargetRegion wide{{0.0, 0.0}, {1.0, 1.0}};
  CHECK(imitation::laplace_nll({2.0, 0.0}, wide) ==
        doctest::Approx(2.0 * std::log(2.0) + 2.0).epsilon(1e-12));

  TargetRegion bad{{0.0, 0.0}, {0.0, 1.0}};
  CHECK_THROWS_AS(imitation::laplace_nll({0.0, 0.0}, bad), std::domain_error);

  // Shared-scale mode reads b_x for both axes.
  TargetRegion uneven{{0.0, 0.0}, {0.5, 9.0}};
  CHECK(imitation::laplace_nll({0.0, 0.0}, uneven, true) == 0.0);
}

TEST_CASE("laplace likelihood: scale argmin sits at the displacement") {
  const double d = 1.7;
  auto nll_at = [&](double b) {
    return imitation::laplace_nll({d, 0.0},
                                  TargetRegion{{0.0, 0.0}, {b, 1.0}});
  };
  double best_b = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (double b = 0.05; b <= 6.0; b += 0.001) {
    const double v = nll_at(b);
    if (v < best) {
      best = v;
      best_b = b;
    }
  }
  CHECK(best_b == doctest::Approx(d).epsilon(1e-3));

  // Bounded below by the log terms at y = mu.
  Rng rng(17, "nll-bound");
  for (int trial = 0; trial < 50; ++trial) {
    TargetRegion r{{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)},
                   {rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)}};
    const Point2 y{rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0)};
    const double floor = std::log(2.0 * r.b.x) + std::log(2.0 * r.b.y);
    CHECK(imitation::laplace_nll(y, r) >= floor - 1e-12);
    CHECK(imitation::laplace_nll(r.mu, r) ==
          doctest::Approx(floor).epsilon(1e-12));
  }
}

TEST_CASE("laplace likelihood is convex in the center") {
  Rng rng(29, "nll-convex");
  for (int trial = 0; trial < 200; ++trial) {
    const Point2 y{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    const Point2 b{rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
    const Point2 m1{rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0)};
    const Point2 m2{rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0)};
    const Point2 mid{(m1.x + m2.x) / 2.0, (m1.y + m2.y) / 2.0};
    const double lhs = imitation::laplace_nll(y, {mid, b});
    const double rhs = (imitation::laplace_nll(y, {m1, b}) +
                        imitation::laplace_nll(y, {m2, b})) /
                       2.0;
    CHECK(lhs <= rhs + 1e-12);
  }
}

TEST_CASE("coordinate-mean L1 distance") {
  std::vector<Point2> a{{1.0, 2.0}, {3.0, 4.0}};
  CHECK(imitation::traj_l1(a, a) == 0.0);

  std::vector<Point2> shifted;
  for (const Point2& p : a) shifted.push_back(p + Point2{1.0, 1.0});
  CHECK(imitation::traj_l1(shifted, a) == 1.0);

  Rng rng(31, "l1");
  std::vector<Point2> p, q;
  for (int i = 0; i < 9; ++i) {
    p.push_back({rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)});
    q.push_back({rng.uniform(-4.0, 4.0), rng.uniform(-4.0, 4.0)});
  }
  double oracle = 0.0;
  for (int i = 0; i < 9; ++i)
    oracle += std::abs(p[i].x - q[i].x) + std::abs(p[i].y - q[i].y);
  oracle /= 18.0;
  CHECK(imitation::traj_l1(p, q) == oracle);

  std::vector<Point2> three(3);
  CHECK_THROWS_AS(imitation::traj_l1(three, a), nnet::ShapeError);
}

TEST_CASE("supervision targets come from the expert") {
  const Scenario s = world::generate_scenario(77, Difficulty::kMedium);
  CHECK(imitation::gt_target(s) == s.expert.points.back());

  const auto path = imitation::gt_path(s, 12, 2.0);
  REQUIRE(path.size() == 12);
  Point2 prev{0.0, 0.0};
  for (const Point2& p : path) {
    CHECK(geom::distance(prev, p) == doctest::Approx(2.0).epsilon(1e-9));
    prev = p;
  }
}

TEST_CASE("a perfect plan with a silent world model scores zero loss") {
  model::Model m(tiny_model_config());
  std::vector<double> zeros(m.param_count(), 0.0);
  const Scenario s = world::generate_scenario(7, Difficulty::kEasy);
  const auto& pcfg = m.config().plan;

  planner::PlanOutput plan;
  plan.target.mu = imitation::gt_target(s);
  plan.target.b = {0.5, 0.5};  // log(2b) vanishes
  plan.path.points = imitation::gt_path(s, pcfg.path_points,
                                        pcfg.path_spacing);
  plan.increments = geom::differentiate(s.expert);
  plan.trajectory = geom::integrate_increments(plan.increments);
  planner::PlanIterate first;
  first.target = plan.target;
  first.path = plan.path;
  first.increments = plan.increments;
  plan.history.push_back(first);

  const auto loss = imitation::compute_losses(m, s, plan, zeros, {});
  CHECK(loss.rec == 0.0);
  CHECK(loss.target == 0.0);
  CHECK(loss.path_l1 == 0.0);
  CHECK(loss.traj_l1 == 0.0);
  CHECK(loss.total == 0.0);
}

TEST_CASE("weight masking and exact recomposition") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(9);
  const Scenario s = world::generate_scenario(8, Difficulty::kMedium);
  const auto plan = m.plan(s, params);

  PretrainConfig geom_only;
  geom_only.beta = 0.0;
  geom_only.gamma = 0.0;
  geom_only.eta = 1.0;
  const auto masked = imitation::compute_losses(m, s, plan, params, geom_only);
  CHECK(masked.total == doctest::Approx(masked.path_l1 + masked.traj_l1)
                            .epsilon(1e-12));

  PretrainConfig defaults;
  const auto full = imitation::compute_losses(m, s, plan, params, defaults);
  const double recomposed = defaults.beta * full.rec +
                            defaults.gamma * full.target +
                            defaults.eta * (full.path_l1 + full.traj_l1);
  CHECK(full.total == doctest::Approx(recomposed).epsilon(1e-12));
  CHECK(full.rec >= 0.0);
  CHECK(full.path_l1 >= 0.0);
  CHECK(full.traj_l1 >= 0.0);
}

TEST_CASE("frozen breakdown on a seeded fixture") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(2024);
  const Scenario s = world::generate_scenario(501, Difficulty::kMedium);
  const auto plan = m.plan(s, params);
  const auto loss = imitation::compute_losses(m, s, plan, params, {});
  CHECK(loss.rec == doctest::Approx(0.60067068664480172).epsilon(1e-9));
  CHECK(loss.target == doctest::Approx(43.335323080524851).epsilon(1e-9));
  CHECK(loss.path_l1 == doctest::Approx(4.1335329871401001).epsilon(1e-9));
  CHECK(loss.traj_l1 == doctest::Approx(9.3803697569130122).epsilon(1e-9));
  CHECK(loss.total == doctest::Approx(13.677372204462598).epsilon(1e-9));
}

TEST_CASE("graph losses agree with the value-level breakdown") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(13);
  const Scenario s = world::generate_scenario(21, Difficulty::kMedium);
  PretrainConfig cfg;

  nnet::Tape t(params);
  const auto nodes = imitation::loss_on_tape(t, m, s, cfg);
  const auto plan = m.plan(s, params);
  const auto value = imitation::compute_losses(m, s, plan, params, cfg);

  CHECK(t.val(nodes.rec).at(0, 0) == doctest::Approx(value.rec).epsilon(1e-12));
  CHECK(t.val(nodes.target).at(0, 0) ==
        doctest::Approx(value.target).epsilon(1e-12));
  CHECK(t.val(nodes.path_l1).at(0, 0) ==
        doctest::Approx(value.path_l1).epsilon(1e-12));
  CHECK(t.val(nodes.traj_l1).at(0, 0) ==
        doctest::Approx(value.traj_l1).epsilon(1e-12));
  CHECK(t.val(nodes.total).at(0, 0) ==
        doctest::Approx(value.total).epsilon(1e-12));
}

TEST_CASE("training gradients flow into every block") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(19);
  const Scenario s = world::generate_scenario(33, Difficulty::kMedium);

  nnet::Tape t(params);
  const auto nodes = imitation::loss_on_tape(t, m, s, {});
  t.backward(nodes.total);
  std::vector<double> grads(params.size(), 0.0);
  t.accumulate_param_grads(grads);

  for (const char* block : {"world", "planner"}) {
    const auto& e = m.layout().find(block);
    double mass = 0.0;
    for (size_t i = e.offset; i < e.offset + e.count; ++i)
      mass += std::abs(grads[i]);
    CHECK_MESSAGE(mass > 0.0, "no gradient in block ", block);
  }
  // The variance head is not part of the imitation objective.
  const auto& v = m.layout().find("variance");
  double variance_mass = 0.0;
  for (size_t i = v.offset; i < v.offset + v.count; ++i)
    variance_mass += std::abs(grads[i]);
  CHECK(variance_mass == 0.0);
}

TEST_CASE("zero epochs returns the parameters untouched") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(23);
  const auto corpus = tiny_corpus(4);
  PretrainConfig cfg;
  cfg.epochs = 0;
  const auto result = imitation::pretrain(m, corpus, params, cfg);
  CHECK(result.params == params);
  CHECK(result.log.empty());
}

TEST_CASE("short training run reduces the loss deterministically") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(29);
  const auto corpus = tiny_corpus(10);
  PretrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 4;
  cfg.learning_rate = 2e-3;
  cfg.seed = 5;

  const auto run = imitation::pretrain(m, corpus, params, cfg);
  REQUIRE(run.log.size() == 4);
  CHECK(run.log.back().train.total < run.log.front().train.total);
  for (const auto& e : run.log) {
    CHECK(std::isfinite(e.val_ade));
    CHECK(e.val_cr >= 0.0);
  }

  const auto rerun = imitation::pretrain(m, corpus, params, cfg);
  CHECK(run.params == rerun.params);

  const auto log_path =
      std::filesystem::temp_directory_path() / "lp_train_log.csv";
  imitation::write_training_log(log_path, run.log);
  std::ifstream in(log_path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,rec,target,path_l1,traj_l1,total,val_ade,val_cr");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
  std::filesystem::remove(log_path);
}

TEST_CASE("runaway steps abort with a numerics error") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(31);
  const auto corpus = tiny_corpus(4);
  PretrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch_size = 4;
  cfg.optimizer = nnet::OptimizerKind::kSgd;
  cfg.learning_rate = 1e18;
  CHECK_THROWS_AS(imitation::pretrain(m, corpus, params, cfg),
                  nnet::NumericsError);
}

TEST_CASE("pretrain validates its inputs") {
  model::Model m(tiny_model_config());
  const auto params = m.init_params(37);
  const auto corpus = tiny_corpus(3);
  CHECK_THROWS_AS(
      imitation::pretrain(m, {}, params, {}), std::invalid_argument);
  std::vector<double> short_params(m.param_count() - 1, 0.0);
  CHECK_THROWS_AS(imitation::pretrain(m, corpus, short_params, {}),
                  nnet::ShapeError);
  PretrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(imitation::pretrain(m, corpus, params, bad),
                  std::invalid_argument);
}

}  // TEST_SUITE
