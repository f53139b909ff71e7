#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "latentplan/geom.hpp"
#include "latentplan/model.hpp"
#include "latentplan/world.hpp"

namespace latentplan::metrics {

struct EvalThresholds {
  double accel_limit = 3.0;  // m/s^2
  double jerk_limit = 5.0;   // m/s^3
  double ttc_window = 1.0;   // seconds of constant-velocity lookahead
  int ttc_samples_per_second = 4;
  geom::Point2 ego_half_extents{2.25, 1.0};
};

// Displacement errors at fixed horizons. With dt = 0.5 s the 1 s / 2 s /
// 3 s horizons are point indices 1, 3 and 5 (points[j] sits at
// (j+1) * dt). Horizons past the end of a short trajectory are skipped;
// avg covers the horizons actually present.
struct AdeResult {
  double ade_1s = 0.0;
  double ade_2s = 0.0;
  double ade_3s = 0.0;
  double avg = 0.0;
};

AdeResult ade(const geom::Trajectory& pred, const geom::Trajectory& gt);

// Ego box poses along an ego-frame trajectory, in world coordinates.
// Headings come from finite differences along the points.
std::vector<geom::OrientedBox> ego_boxes(const geom::Trajectory& traj,
                                         const world::Scenario& s,
                                         geom::Point2 half_extents);

// True when the ego box at trajectory point j overlaps any agent box at
// the matching script step.
std::vector<bool> collision_mask(const geom::Trajectory& traj,
                                 const world::Scenario& s,
                                 const EvalThresholds& thr = {});

// Percentage of (scenario, horizon point) pairs in collision.
double collision_rate(std::span<const geom::Trajectory> plans,
                      std::span<const world::Scenario> scenarios,
                      const EvalThresholds& thr = {});

struct PdmsScore {
  double nc = 0.0;    // no collision over the horizon
  double dac = 0.0;   // all points inside the drivable area
  double ttc = 0.0;   // constant-velocity lookahead stays clear
  double comf = 0.0;  // accel and jerk within limits
  double ep = 0.0;    // route progress relative to the expert
  double pdms = 0.0;  // nc * dac * (5 ep + 5 ttc + 2 comf) / 12
};

PdmsScore pdms(const geom::Trajectory& traj, const world::Scenario& s,
               const EvalThresholds& thr = {});

struct ScenarioEval {
  uint64_t seed = 0;
  AdeResult ade;
  int collisions = 0;  // horizon points in collision
  int horizon = 0;
  PdmsScore pdms;
};

struct EvalReport {
  std::vector<ScenarioEval> rows;
  double ade_1s = 0.0;
  double ade_2s = 0.0;
  double ade_3s = 0.0;
  double ade_avg = 0.0;
  double collision_rate = 0.0;  // percent
  double pdms = 0.0;            // mean over rows; 0 when not requested
};

// Plans every scenario with the model and scores the results against
// the experts. Deterministic in (params, scenarios, thresholds).
EvalReport evaluate(const model::Model& m, std::span<const double> params,
                    std::span<const world::Scenario> scenarios,
                    const EvalThresholds& thr = {}, bool with_pdms = true);

// One row per scenario plus a trailing summary row.
void write_report_csv(const std::filesystem::path& path,
                      const EvalReport& report);

}  // namespace latentplan::metrics
