#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "latentplan/metrics.hpp"
#include "oracles.hpp"

using namespace latentplan;
using geom::Point2;
using geom::Trajectory;
using metrics::EvalThresholds;
using world::AgentPose;
using world::AgentTrack;
using world::Scenario;

namespace {

Trajectory constant_speed_traj(double step, int count = 6) {
  Trajectory t;
  for (int j = 1; j <= count; ++j) t.points.push_back({step * j, 0.0});
  return t;
}

// Straight corridor along +x with no traffic; expert cruises at 5 m/s.
Scenario open_road() {
  Scenario s;
  s.seed = 100;
  s.ego_start = {{0.0, 0.0}, 0.0, 5.0};
  s.drivable.vertices = {{-15.0, -8.0}, {45.0, -8.0}, {45.0, 8.0}, {-15.0, 8.0}};
  s.route = {{-10.0, 0.0}, {30.0, 0.0}};
  s.expert = constant_speed_traj(2.5);
  return s;
}

Scenario with_static_agent(Scenario s, Point2 position) {
  AgentTrack a;
  a.half_extents = {2.25, 1.0};
  for (int k = 0; k <= 6; ++k) a.poses.push_back(AgentPose{position, 0.0});
  s.agents.push_back(a);
  return s;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("displacement error: zero on equal inputs, 3-4-5 on offsets") {
  const Trajectory gt = constant_speed_traj(2.5);
  const auto zero = metrics::ade(gt, gt);
  CHECK(zero.ade_1s == 0.0);
  CHECK(zero.ade_2s == 0.0);
  CHECK(zero.ade_3s == 0.0);
  CHECK(zero.avg == 0.0);

  Trajectory shifted = gt;
  for (Point2& p : shifted.points) p = p + Point2{0.3, 0.4};
  const auto offset = metrics::ade(shifted, gt);
  CHECK(offset.ade_1s == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(offset.ade_2s == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(offset.ade_3s == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(offset.avg == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("horizon columns map to point indices 1, 3 and 5") {
  Trajectory gt;
  gt.points.assign(6, Point2{0.0, 0.0});
  Trajectory pred = gt;
  pred.points[1] = {1.0, 0.0};
  const auto r = metrics::ade(pred, gt);
  CHECK(r.ade_1s == 1.0);
  CHECK(r.ade_2s == 0.0);
  CHECK(r.ade_3s == 0.0);
  CHECK(r.avg == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Trajectory shorter = gt;
  shorter.points.resize(5);
  CHECK_THROWS_AS(metrics::ade(shorter, gt), nnet::ShapeError);
  Trajectory empty;
  CHECK_THROWS_AS(metrics::ade(empty, empty), nnet::ShapeError);
}

TEST_CASE("collision rate counts scenario-horizon pairs") {
  const Scenario clear = open_road();
  const Scenario blocked = with_static_agent(open_road(), {5.0, 0.0});
  const Trajectory plan = constant_speed_traj(2.5);

  std::vector<Trajectory> plans{plan, plan};
  std::vector<Scenario> scenarios{clear, blocked};
  // The ego box (2.25 x 1.0) overlaps the agent at 2.5, 5.0 and 7.5 m:
  // 3 of 12 pairs.
  CHECK(metrics::collision_rate(plans, scenarios) == 25.0);

  std::vector<Trajectory> only{plan};
  std::vector<Scenario> clear_only{clear};
  CHECK(metrics::collision_rate(only, clear_only) == 0.0);

  std::vector<Scenario> swapped{blocked, clear};
  CHECK(metrics::collision_rate(plans, swapped) == 25.0);

  std::vector<Trajectory> too_few{plan};
  CHECK_THROWS_AS(metrics::collision_rate(too_few, scenarios),
                  nnet::ShapeError);
}

TEST_CASE("driving score: perfect run scores exactly one") {
  const Scenario s = open_road();
  const auto score = metrics::pdms(constant_speed_traj(2.5), s);
  CHECK(score.nc == 1.0);
  CHECK(score.dac == 1.0);
  CHECK(score.ttc == 1.0);
  CHECK(score.comf == 1.0);
  CHECK(score.ep == 1.0);
  CHECK(score.pdms == 1.0);
}

TEST_CASE("driving score: collision zeroes everything") {
  const Scenario s = with_static_agent(open_road(), {5.0, 0.0});
  const auto score = metrics::pdms(constant_speed_traj(2.5), s);
  CHECK(score.nc == 0.0);
  CHECK(score.pdms == 0.0);
}

TEST_CASE("driving score: partial progress scales the weighted sum") {
  Scenario s = open_road();
  s.ego_start.speed = 4.0;
  const auto score = metrics::pdms(constant_speed_traj(2.0), s);
  CHECK(score.nc == 1.0);
  CHECK(score.ttc == 1.0);
  CHECK(score.comf == 1.0);
  CHECK(score.ep == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(score.pdms == doctest::Approx(11.0 / 12.0).epsilon(1e-12));
  CHECK(score.pdms == score.nc * score.dac *
                          (5.0 * score.ep + 5.0 * score.ttc +
                           2.0 * score.comf) /
                          12.0);
}

TEST_CASE("driving score: constant-velocity lookahead flags near misses") {
  Scenario s = with_static_agent(open_road(), {18.0, 0.0});
  s.ego_start.speed = 4.0;
  const auto score = metrics::pdms(constant_speed_traj(2.0), s);
  CHECK(score.nc == 1.0);  // 12 + 4.5 + 1.5 margin at the last point
  CHECK(score.ttc == 0.0);  // but one more half second closes it
  CHECK(score.pdms == doctest::Approx((5.0 * 0.8 + 2.0) / 12.0).epsilon(1e-12));
}

TEST_CASE("driving score: harsh acceleration fails comfort") {
  Scenario s = open_road();
  s.drivable.vertices = {{-15.0, -8.0}, {60.0, -8.0}, {60.0, 8.0}, {-15.0, 8.0}};
  Trajectory jumpy;
  jumpy.points = {{2.5, 0.0}, {5.0, 0.0}, {7.5, 0.0},
                  {20.0, 0.0}, {22.5, 0.0}, {25.0, 0.0}};
  const auto score = metrics::pdms(jumpy, s);
  CHECK(score.comf == 0.0);
  CHECK(score.nc == 1.0);
  CHECK(score.ep == 1.0);
  CHECK(score.pdms == doctest::Approx(10.0 / 12.0).epsilon(1e-12));
}

TEST_CASE("driving score: leaving the drivable area zeroes the product") {
  Scenario s = open_road();
  Trajectory stray = constant_speed_traj(2.5);
  stray.points.back().y = 20.0;
  const auto score = metrics::pdms(stray, s);
  CHECK(score.dac == 0.0);
  CHECK(score.pdms == 0.0);
}

TEST_CASE("evaluation report is deterministic and writes stable csv") {
  model::ModelConfig cfg;
  cfg.grid = {{-8.0, -8.0}, 2.0, 8, 8};
  cfg.world.channels = 4;
  cfg.world.encoder_hidden = 6;
  cfg.world.decoder_hidden = 6;
  cfg.plan.query_dim = 8;
  cfg.plan.key_dim = 6;
  cfg.plan.path_points = 5;
  cfg.plan.state_dim = 6;
  cfg.plan.b_dim = 3;
  cfg.plan.head_hidden = 7;
  cfg.plan.fusion_hidden = 7;
  model::Model m(cfg);
  const auto params = m.init_params(5);

  std::vector<Scenario> corpus;
  for (uint64_t seed = 1; seed <= 3; ++seed)
    corpus.push_back(world::generate_scenario(seed, world::Difficulty::kEasy));

  const auto a = metrics::evaluate(m, params, corpus);
  const auto b = metrics::evaluate(m, params, corpus);
  REQUIRE(a.rows.size() == 3);
  CHECK(a.ade_avg == b.ade_avg);
  CHECK(a.collision_rate == b.collision_rate);
  CHECK(a.pdms == b.pdms);
  CHECK(a.ade_avg > 0.0);

  const auto path = std::filesystem::temp_directory_path() / "lp_report.csv";
  metrics::write_report_csv(path, a);
  std::ifstream in(path);
  REQUIRE(in.good());
  int lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 5);  // header, three rows, summary
  std::filesystem::remove(path);
}

}  // TEST_SUITE
