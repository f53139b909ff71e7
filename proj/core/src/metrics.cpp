#include "latentplan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace latentplan::metrics {

using geom::Point2;
using geom::Trajectory;
using world::Scenario;

AdeResult ade(const Trajectory& pred, const Trajectory& gt) {
  if (pred.points.size() != gt.points.size())
    throw nnet::ShapeError("ade: trajectory lengths differ");
  if (pred.points.empty()) throw nnet::ShapeError("ade: empty trajectory");

  AdeResult out;
  const int horizons[3] = {1, 3, 5};
  double* slots[3] = {&out.ade_1s, &out.ade_2s, &out.ade_3s};
  double sum = 0.0;
  int present = 0;
  for (int h = 0; h < 3; ++h) {
    const int idx = horizons[h];
    if (idx >= static_cast<int>(pred.points.size())) break;
    *slots[h] = geom::distance(pred.points[idx], gt.points[idx]);
    sum += *slots[h];
    ++present;
  }
  out.avg = present > 0 ? sum / present : 0.0;
  return out;
}

std::vector<geom::OrientedBox> ego_boxes(const Trajectory& traj,
                                         const Scenario& s,
                                         Point2 half_extents) {
  const auto headings =
      geom::motion_headings(traj.points, {0.0, 0.0}, 0.0);
  std::vector<geom::OrientedBox> boxes;
  boxes.reserve(traj.points.size());
  for (size_t j = 0; j < traj.points.size(); ++j) {
    geom::OrientedBox box;
    box.center = geom::local_to_world(traj.points[j], s.ego_start.position,
                                      s.ego_start.heading);
    box.half_extents = half_extents;
    box.heading = geom::normalize_angle(s.ego_start.heading + headings[j]);
    boxes.push_back(box);
  }
  return boxes;
}

std::vector<bool> collision_mask(const Trajectory& traj, const Scenario& s,
                                 const EvalThresholds& thr) {
  const auto boxes = ego_boxes(traj, s, thr.ego_half_extents);
  std::vector<bool> mask(boxes.size(), false);
  for (size_t j = 0; j < boxes.size(); ++j) {
    for (const auto& agent : s.agents) {
      // points[j] sits at (j+1) * dt, matching script step j + 1.
      if (geom::obb_overlap(boxes[j], agent.box_at(j + 1))) {
        mask[j] = true;
        break;
      }
    }
  }
  return mask;
}

double collision_rate(std::span<const Trajectory> plans,
                      std::span<const Scenario> scenarios,
                      const EvalThresholds& thr) {
  if (plans.size() != scenarios.size())
    throw nnet::ShapeError("collision_rate: list lengths differ");
  size_t pairs = 0;
  size_t hits = 0;
  for (size_t i = 0; i < plans.size(); ++i) {
    const auto mask = collision_mask(plans[i], scenarios[i], thr);
    pairs += mask.size();
    for (const bool hit : mask) hits += hit ? 1 : 0;
  }
  return pairs == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / pairs;
}

namespace {

// Velocity at each point by backward difference; the step before the
// first point is anchored at the ego origin.
std::vector<Point2> point_velocities(const Trajectory& traj) {
  std::vector<Point2> v(traj.points.size());
  Point2 prev{0.0, 0.0};
  for (size_t j = 0; j < traj.points.size(); ++j) {
    v[j] = (traj.points[j] - prev) * (1.0 / traj.dt);
    prev = traj.points[j];
  }
  return v;
}

bool ttc_clear(const Trajectory& traj, const Scenario& s,
               const EvalThresholds& thr,
               const std::vector<geom::OrientedBox>& boxes) {
  const auto vel = point_velocities(traj);
  const int samples =
      std::max(1, static_cast<int>(std::round(thr.ttc_window *
                                              thr.ttc_samples_per_second)));
  for (size_t j = 0; j < boxes.size(); ++j) {
    const Point2 v_world =
        geom::rotate(vel[j], s.ego_start.heading);
    for (int k = 1; k <= samples; ++k) {
      const double tau =
          thr.ttc_window * static_cast<double>(k) / samples;
      geom::OrientedBox ego = boxes[j];
      ego.center = ego.center + v_world * tau;
      for (const auto& agent : s.agents) {
        const geom::OrientedBox now = agent.box_at(j + 1);
        const geom::OrientedBox next = agent.box_at(j + 2);
        const Point2 agent_v =
            (next.center - now.center) * (1.0 / traj.dt);
        geom::OrientedBox moved = now;
        moved.center = now.center + agent_v * tau;
        if (geom::obb_overlap(ego, moved)) return false;
      }
    }
  }
  return true;
}

bool comfortable(const Trajectory& traj, const Scenario& s,
                 const EvalThresholds& thr) {
  const auto vel = point_velocities(traj);
  std::vector<Point2> accel(vel.size());
  Point2 prev_v{s.ego_start.speed, 0.0};
  for (size_t j = 0; j < vel.size(); ++j) {
    accel[j] = (vel[j] - prev_v) * (1.0 / traj.dt);
    prev_v = vel[j];
  }
  for (const Point2& a : accel)
    if (geom::norm(a) > thr.accel_limit) return false;
  for (size_t j = 1; j < accel.size(); ++j) {
    const Point2 jerk = (accel[j] - accel[j - 1]) * (1.0 / traj.dt);
    if (geom::norm(jerk) > thr.jerk_limit) return false;
  }
  return true;
}

double route_progress(const Trajectory& traj, const Scenario& s) {
  if (traj.points.empty()) return 0.0;
  const Point2 end_world = geom::local_to_world(
      traj.points.back(), s.ego_start.position, s.ego_start.heading);
  return geom::project_arclength(s.route, end_world) -
         geom::project_arclength(s.route, s.ego_start.position);
}

}  // namespace

PdmsScore pdms(const Trajectory& traj, const Scenario& s,
               const EvalThresholds& thr) {
  PdmsScore out;
  const auto mask = collision_mask(traj, s, thr);
  out.nc = std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })
               ? 1.0
               : 0.0;

  out.dac = 1.0;
  for (const Point2& p : traj.points) {
    const Point2 w = geom::local_to_world(p, s.ego_start.position,
                                          s.ego_start.heading);
    if (!geom::point_in_polygon(w, s.drivable)) {
      out.dac = 0.0;
      break;
    }
  }

  const auto boxes = ego_boxes(traj, s, thr.ego_half_extents);
  out.ttc = ttc_clear(traj, s, thr, boxes) ? 1.0 : 0.0;
  out.comf = comfortable(traj, s, thr) ? 1.0 : 0.0;

  const double expert = route_progress(s.expert, s);
  const double mine = route_progress(traj, s);
  out.ep = std::clamp(mine / std::max(expert, 1e-9), 0.0, 1.0);

  out.pdms =
      out.nc * out.dac * (5.0 * out.ep + 5.0 * out.ttc + 2.0 * out.comf) / 12.0;
  return out;
}

EvalReport evaluate(const model::Model& m, std::span<const double> params,
                    std::span<const Scenario> scenarios,
                    const EvalThresholds& thr, bool with_pdms) {
  EvalReport report;
  report.rows.reserve(scenarios.size());
  size_t pairs = 0;
  size_t hits = 0;
  for (const Scenario& s : scenarios) {
    const auto plan = m.plan(s, params);
    ScenarioEval row;
    row.seed = s.seed;
    row.ade = ade(plan.trajectory, s.expert);
    const auto mask = collision_mask(plan.trajectory, s, thr);
    row.horizon = static_cast<int>(mask.size());
    for (const bool hit : mask) row.collisions += hit ? 1 : 0;
    pairs += mask.size();
    hits += static_cast<size_t>(row.collisions);
    if (with_pdms) row.pdms = pdms(plan.trajectory, s, thr);
    report.rows.push_back(row);
  }

  if (!report.rows.empty()) {
    for (const auto& row : report.rows) {
      report.ade_1s += row.ade.ade_1s;
      report.ade_2s += row.ade.ade_2s;
      report.ade_3s += row.ade.ade_3s;
      report.ade_avg += row.ade.avg;
      report.pdms += row.pdms.pdms;
    }
    const double n = static_cast<double>(report.rows.size());
    report.ade_1s /= n;
    report.ade_2s /= n;
    report.ade_3s /= n;
    report.ade_avg /= n;
    report.pdms = with_pdms ? report.pdms / n : 0.0;
  }
  report.collision_rate =
      pairs == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / pairs;
  return report;
}

void write_report_csv(const std::filesystem::path& path,
                      const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot open " +
                                     path.string());
  out.precision(17);
  out << "seed,ade_1s,ade_2s,ade_3s,ade_avg,collisions,horizon,"
         "nc,dac,ttc,comf,ep,pdms\n";
  for (const auto& r : report.rows) {
    out << r.seed << ',' << r.ade.ade_1s << ',' << r.ade.ade_2s << ','
        << r.ade.ade_3s << ',' << r.ade.avg << ',' << r.collisions << ','
        << r.horizon << ',' << r.pdms.nc << ',' << r.pdms.dac << ','
        << r.pdms.ttc << ',' << r.pdms.comf << ',' << r.pdms.ep << ','
        << r.pdms.pdms << '\n';
  }
  // Summary carries the corpus-level collision percentage in the
  // collisions column; per-score columns stay blank.
  out << "summary," << report.ade_1s << ',' << report.ade_2s << ','
      << report.ade_3s << ',' << report.ade_avg << ','
      << report.collision_rate << ",,,,,,," << report.pdms << '\n';
}

}  // namespace latentplan::metrics
