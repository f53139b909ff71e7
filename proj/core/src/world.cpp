#include "latentplan/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentplan::world {

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::kEasy: return "easy";
    case Difficulty::kMedium: return "medium";
    case Difficulty::kHard: return "hard";
  }
  return "medium";
}

std::string to_string(Command c) {
  switch (c) {
    case Command::kLeft: return "left";
    case Command::kStraight: return "straight";
    case Command::kRight: return "right";
  }
  return "straight";
}

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "easy") return Difficulty::kEasy;
  if (s == "medium") return Difficulty::kMedium;
  if (s == "hard") return Difficulty::kHard;
  throw CorpusError("unknown difficulty '" + s + "'");
}

Command command_from_string(const std::string& s) {
  if (s == "left") return Command::kLeft;
  if (s == "straight") return Command::kStraight;
  if (s == "right") return Command::kRight;
  throw CorpusError("unknown command '" + s + "'");
}

geom::OrientedBox AgentTrack::box_at(size_t step) const {
  if (poses.empty()) {
    throw geom::GeometryError("AgentTrack: empty pose script");
  }
  const AgentPose& p = poses[std::min(step, poses.size() - 1)];
  return {p.position, half_extents, p.heading};
}

// -- scenario generation -- //

namespace {

// Analytic lane: a straight lead-in, an optional constant-radius turn,
// and a straight tail, parameterized by arc length from the origin
// where the path heads along +x.
struct LanePath {
  double lead = 10.0;
  double radius = 12.0;
  double sweep = 0.0;  // signed turn angle; 0 = straight
  double tail = 20.0;

  double total() const { return lead + std::abs(sweep) * radius + tail; }

  double heading_at(double s) const {
    if (sweep == 0.0 || s <= lead) return 0.0;
    const double arc = std::abs(sweep) * radius;
    const double t = std::min(s - lead, arc);
    return sweep * (t / arc);
  }

  geom::Point2 point_at(double s) const {
    if (sweep == 0.0) return {s, 0.0};
    if (s <= lead) return {s, 0.0};
    const double arc = std::abs(sweep) * radius;
    const double sign = sweep > 0.0 ? 1.0 : -1.0;
    const geom::Point2 center{lead, sign * radius};
    if (s <= lead + arc) {
      const double phi = sign * (s - lead) / radius;
      return {center.x + radius * std::sin(std::abs(phi)),
              center.y - sign * radius * std::cos(std::abs(phi))};
    }
    const geom::Point2 end{center.x + radius * std::sin(std::abs(sweep)),
                           center.y - sign * radius * std::cos(std::abs(sweep))};
    const double h = sweep;
    return {end.x + (s - lead - arc) * std::cos(h),
            end.y + (s - lead - arc) * std::sin(h)};
  }

  geom::Point2 normal_at(double s) const {
    const double h = heading_at(s);
    return {-std::sin(h), std::cos(h)};
  }
};

struct Candidate {
  double speed = 0.0;
  Command command = Command::kStraight;
  LanePath lane;
  double half_width = 6.0;
  std::vector<AgentTrack> agents;       // canonical frame
  geom::Polygon2 drivable;              // canonical frame
  std::vector<geom::Point2> route;      // canonical frame
  geom::Trajectory expert;              // canonical == ego frame
};

geom::Polygon2 corridor_polygon(const LanePath& lane, double half_width) {
  std::vector<double> stations;
  for (double s = -10.0; s < lane.total(); s += 2.5) stations.push_back(s);
  stations.push_back(lane.total());

  geom::Polygon2 poly;
  auto offset_point = [&](double s, double side) {
    // Extend the path linearly behind the origin.
    const double sc = std::max(s, 0.0);
    geom::Point2 p = lane.point_at(sc);
    if (s < 0.0) p.x += s;
    return p + lane.normal_at(sc) * side;
  };
  for (const double s : stations) {
    poly.vertices.push_back(offset_point(s, -half_width));
  }
  for (auto it = stations.rbegin(); it != stations.rend(); ++it) {
    poly.vertices.push_back(offset_point(*it, half_width));
  }
  if (poly.signed_area() <= 0.0) {
    std::reverse(poly.vertices.begin(), poly.vertices.end());
  }
  return poly;
}

Candidate draw_candidate(Rng& rng, Difficulty difficulty,
                         const GeneratorConfig& cfg) {
  Candidate c;
  c.speed = rng.uniform(cfg.min_speed, cfg.max_speed);
  const int cmd = rng.uniform_int(3);
  c.command = cmd == 0 ? Command::kLeft
                       : (cmd == 1 ? Command::kStraight : Command::kRight);

  c.lane.lead = rng.uniform(6.0, 12.0);
  c.lane.tail = 22.0;
  if (c.command == Command::kStraight) {
    c.lane.sweep = 0.0;
    c.lane.tail = 45.0;
  } else {
    c.lane.radius = rng.uniform(10.0, 16.0);
    const double sweep = rng.uniform(1.2, 1.7);
    c.lane.sweep = c.command == Command::kLeft ? sweep : -sweep;
  }
  c.half_width = rng.uniform(5.0, 7.0);

  for (double s = 0.0; s < c.lane.total(); s += 2.0) {
    c.route.push_back(c.lane.point_at(s));
  }
  c.route.push_back(c.lane.point_at(c.lane.total()));

  // Experts track the centerline only approximately: a per-scene lateral
  // drift ramps in after the first step. The coarse raster cannot resolve
  // it, so imitation keeps an irreducible lateral residual.
  const double drift = rng.uniform(-1.0, 1.0);
  c.expert.dt = cfg.dt;
  for (int j = 1; j <= cfg.horizon_steps; ++j) {
    const double s = c.speed * cfg.dt * j;
    const double w = std::clamp((s - 4.0) / 8.0, 0.0, 1.0);
    c.expert.points.push_back(c.lane.point_at(s) +
                              c.lane.normal_at(s) * (drift * w));
  }
  // Snap each point onto the running sum of its own increments so the
  // trajectory is always exactly recoverable from per-step deltas.
  geom::Point2 acc;
  for (geom::Point2& p : c.expert.points) {
    acc = acc + (p - acc);
    p = acc;
  }
  c.drivable = corridor_polygon(c.lane, c.half_width);

  const double reach = c.speed * cfg.dt * cfg.horizon_steps;
  const int n_agents =
      cfg.min_agents + rng.uniform_int(cfg.max_agents - cfg.min_agents + 1);
  for (int a = 0; a < n_agents; ++a) {
    AgentTrack track;
    track.half_extents = {rng.uniform(1.9, 2.5), rng.uniform(0.8, 1.15)};
    double anchor_s = 0.0;
    double lateral = 0.0;
    switch (difficulty) {
      case Difficulty::kEasy:
        // Ahead of everything the expert can reach, receding.
        anchor_s = rng.uniform(reach + 12.0, reach + 26.0);
        lateral = rng.uniform(-2.0, 2.0);
        break;
      case Difficulty::kMedium:
        anchor_s = rng.uniform(5.0, std::min(24.0, c.lane.total() - 8.0));
        lateral = (rng.uniform_int(2) == 0 ? 1.0 : -1.0) * rng.uniform(2.4, 4.5);
        break;
      case Difficulty::kHard:
        anchor_s = rng.uniform(4.0, std::min(20.0, c.lane.total() - 8.0));
        lateral = (rng.uniform_int(2) == 0 ? 1.0 : -1.0) * rng.uniform(1.4, 3.0);
        break;
    }
    const geom::Point2 base =
        c.lane.point_at(anchor_s) + c.lane.normal_at(anchor_s) * lateral;
    double heading = c.lane.heading_at(anchor_s);
    double speed = 0.0;
    if (difficulty == Difficulty::kEasy) {
      speed = rng.uniform(2.0, 6.0);  // moving away
    } else {
      heading += rng.uniform(-0.35, 0.35);
      speed = rng.uniform_int(4) == 0 ? 0.0 : rng.uniform(0.5, 5.0);
    }
    const geom::Point2 vel{speed * std::cos(heading), speed * std::sin(heading)};
    for (int k = 0; k <= cfg.horizon_steps; ++k) {
      track.poses.push_back(
          AgentPose{base + vel * (cfg.dt * k), geom::normalize_angle(heading)});
    }
    c.agents.push_back(std::move(track));
  }
  return c;
}

// Conservative box clearance: center distance minus both outer radii.
double conservative_clearance(const Candidate& c, const GeneratorConfig& cfg) {
  const double ego_r = geom::norm(cfg.ego_half_extents);
  double worst = std::numeric_limits<double>::infinity();
  std::vector<geom::Point2> ego_pts;
  ego_pts.push_back({0.0, 0.0});
  for (const auto& p : c.expert.points) ego_pts.push_back(p);
  for (const AgentTrack& a : c.agents) {
    const double agent_r = geom::norm(a.half_extents);
    for (size_t k = 0; k < ego_pts.size(); ++k) {
      const double d =
          geom::distance(a.poses[std::min(k, a.poses.size() - 1)].position,
                         ego_pts[k]);
      worst = std::min(worst, d - agent_r - ego_r);
    }
  }
  return worst;
}

double closest_pass(const Candidate& c) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<geom::Point2> ego_pts;
  ego_pts.push_back({0.0, 0.0});
  for (const auto& p : c.expert.points) ego_pts.push_back(p);
  for (const AgentTrack& a : c.agents) {
    for (const AgentPose& pose : a.poses) {
      for (const geom::Point2& e : ego_pts) {
        best = std::min(best, geom::distance(pose.position, e));
      }
    }
  }
  return best;
}

bool expert_collides(const Candidate& c, const GeneratorConfig& cfg,
                     double inflate) {
  const auto headings = geom::motion_headings(c.expert.points, {0.0, 0.0}, 0.0);
  const geom::Point2 ego_he = cfg.ego_half_extents + geom::Point2{inflate, inflate};
  for (const AgentTrack& a : c.agents) {
    // Step 0: ego at the origin; step j+1: expert point j.
    if (geom::obb_overlap({{0.0, 0.0}, ego_he, 0.0}, a.box_at(0))) return true;
    for (size_t j = 0; j < c.expert.points.size(); ++j) {
      const geom::OrientedBox ego{c.expert.points[j], ego_he, headings[j]};
      if (geom::obb_overlap(ego, a.box_at(j + 1))) return true;
    }
  }
  return false;
}

bool accept_candidate(const Candidate& c, Difficulty difficulty,
                      const GeneratorConfig& cfg) {
  switch (difficulty) {
    case Difficulty::kEasy:
      return conservative_clearance(c, cfg) >= 2.0;
    case Difficulty::kMedium:
      return !expert_collides(c, cfg, 0.25) && closest_pass(c) <= 5.0 &&
             closest_pass(c) >= 1.8;
    case Difficulty::kHard:
      return !expert_collides(c, cfg, 0.0) && closest_pass(c) <= 3.5;
  }
  return false;
}

}  // namespace

Scenario generate_scenario(uint64_t seed, Difficulty difficulty,
                           const GeneratorConfig& cfg) {
  Rng rng(seed, "world.scenario." + to_string(difficulty));
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Candidate c = draw_candidate(rng, difficulty, cfg);
    if (!accept_candidate(c, difficulty, cfg)) continue;

    // A random rigid motion takes the canonical frame to world space;
    // the expert trajectory stays in the ego frame and is untouched.
    const double theta = rng.uniform(-geom::kPi, geom::kPi);
    const geom::Point2 shift{rng.uniform(-20.0, 20.0),
                             rng.uniform(-20.0, 20.0)};
    auto to_world = [&](geom::Point2 p) {
      return geom::rotate(p, theta) + shift;
    };

    Scenario s;
    s.seed = seed;
    s.difficulty = difficulty;
    s.command = c.command;
    s.ego_start = {shift, geom::normalize_angle(theta), c.speed};
    for (AgentTrack& a : c.agents) {
      for (AgentPose& p : a.poses) {
        p.position = to_world(p.position);
        p.heading = geom::normalize_angle(p.heading + theta);
      }
      s.agents.push_back(std::move(a));
    }
    for (geom::Point2& v : c.drivable.vertices) v = to_world(v);
    s.drivable = std::move(c.drivable);
    for (geom::Point2& r : c.route) r = to_world(r);
    s.route = std::move(c.route);
    s.expert = std::move(c.expert);
    return s;
  }
  throw GenerationError("scenario generation exhausted " +
                        std::to_string(cfg.max_attempts) +
                        " attempts (seed " + std::to_string(seed) +
                        ", difficulty " + to_string(difficulty) + ")");
}

Scenario advance_one_step(const Scenario& s) {
  if (s.expert.points.empty()) {
    throw geom::GeometryError("advance_one_step: empty expert trajectory");
  }
  Scenario out = s;
  const geom::Point2 step = s.expert.points.front();
  const geom::Point2 new_pos =
      geom::local_to_world(step, s.ego_start.position, s.ego_start.heading);
  double new_heading = s.ego_start.heading;
  if (geom::norm(step) >= 1e-9) {
    new_heading =
        geom::normalize_angle(s.ego_start.heading + std::atan2(step.y, step.x));
  }
  out.ego_start = {new_pos, new_heading, geom::norm(step) / s.expert.dt};

  for (AgentTrack& a : out.agents) {
    if (a.poses.size() > 1) {
      a.poses.erase(a.poses.begin());
    }
    a.poses.push_back(a.poses.back());  // hold the final pose
  }

  // Re-express the remaining expert points in the new ego frame and
  // extend by one constant-velocity step.
  std::vector<geom::Point2> pts;
  for (size_t j = 1; j < s.expert.points.size(); ++j) {
    const geom::Point2 w = geom::local_to_world(
        s.expert.points[j], s.ego_start.position, s.ego_start.heading);
    pts.push_back(geom::world_to_local(w, new_pos, new_heading));
  }
  geom::Point2 last{0.0, 0.0};
  geom::Point2 prev{0.0, 0.0};
  if (!pts.empty()) last = pts.back();
  if (pts.size() > 1) prev = pts[pts.size() - 2];
  pts.push_back(last + (last - prev));
  out.expert.points = std::move(pts);
  return out;
}

std::vector<geom::Point2> expert_world_path(const Scenario& s) {
  std::vector<geom::Point2> out;
  out.reserve(s.expert.points.size() + 1);
  out.push_back(s.ego_start.position);
  for (const geom::Point2& p : s.expert.points) {
    out.push_back(
        geom::local_to_world(p, s.ego_start.position, s.ego_start.heading));
  }
  return out;
}

// -- rasterization -- //

nnet::Mat rasterize(const Scenario& s, const geom::GridSpec& grid) {
  if (grid.width <= 0 || grid.height <= 0 || !(grid.cell_size > 0.0)) {
    throw geom::GeometryError("rasterize: invalid grid spec");
  }
  const int cells = grid.cell_count();
  nnet::Mat out(cells, kRasterPlanes);

  // Everything below works in the ego frame.
  const geom::Point2 ego_pos = s.ego_start.position;
  const double ego_heading = s.ego_start.heading;

  // Plane 0: agent occupancy at the current step.
  for (const AgentTrack& a : s.agents) {
    const geom::OrientedBox wb = a.box_at(0);
    const geom::Point2 center = geom::world_to_local(wb.center, ego_pos, ego_heading);
    const double heading = wb.heading - ego_heading;
    const double r = geom::norm(wb.half_extents) + grid.cell_size;
    const int i_lo = std::max(
        0, static_cast<int>(std::floor((center.x - r - grid.origin.x) / grid.cell_size)));
    const int i_hi = std::min(
        grid.width - 1,
        static_cast<int>(std::ceil((center.x + r - grid.origin.x) / grid.cell_size)));
    const int j_lo = std::max(
        0, static_cast<int>(std::floor((center.y - r - grid.origin.y) / grid.cell_size)));
    const int j_hi = std::min(
        grid.height - 1,
        static_cast<int>(std::ceil((center.y + r - grid.origin.y) / grid.cell_size)));
    for (int j = j_lo; j <= j_hi; ++j) {
      for (int i = i_lo; i <= i_hi; ++i) {
        const geom::Point2 cc = grid.cell_center(i, j);
        const geom::Point2 local = geom::world_to_local(cc, center, heading);
        if (std::abs(local.x) <= wb.half_extents.x &&
            std::abs(local.y) <= wb.half_extents.y) {
          out.at(j * grid.width + i, 0) = 1.0;
        }
      }
    }
    // Never lose a small box between cell centers.
    const auto pc = geom::project_to_grid(center, grid);
    if (!pc.clamped) out.at(pc.cell_j * grid.width + pc.cell_i, 0) = 1.0;
  }

  // Plane 1: drivable mask.
  geom::Polygon2 local_poly;
  local_poly.vertices.reserve(s.drivable.vertices.size());
  for (const geom::Point2& v : s.drivable.vertices) {
    local_poly.vertices.push_back(geom::world_to_local(v, ego_pos, ego_heading));
  }
  const bool have_poly = local_poly.vertices.size() >= 3 &&
                         local_poly.signed_area() > 0.0;
  // Planes 2 and 3: direction of the nearest route segment.
  std::vector<geom::Point2> local_route;
  local_route.reserve(s.route.size());
  for (const geom::Point2& v : s.route) {
    local_route.push_back(geom::world_to_local(v, ego_pos, ego_heading));
  }

  for (int j = 0; j < grid.height; ++j) {
    for (int i = 0; i < grid.width; ++i) {
      const int cell = j * grid.width + i;
      const geom::Point2 cc = grid.cell_center(i, j);
      if (have_poly && geom::point_in_polygon(cc, local_poly)) {
        out.at(cell, 1) = 1.0;
      }
      if (local_route.size() >= 2) {
        double best = std::numeric_limits<double>::infinity();
        geom::Point2 dir{0.0, 0.0};
        for (size_t k = 0; k + 1 < local_route.size(); ++k) {
          const geom::Point2 a = local_route[k];
          const geom::Point2 b = local_route[k + 1];
          const geom::Point2 d = b - a;
          const double len2 = geom::dot(d, d);
          if (len2 <= 0.0) continue;
          const double t =
              std::clamp(geom::dot(cc - a, d) / len2, 0.0, 1.0);
          const geom::Point2 q = a + d * t;
          const double d2 = geom::dot(cc - q, cc - q);
          if (d2 < best) {
            best = d2;
            const double len = std::sqrt(len2);
            dir = {d.x / len, d.y / len};
          }
        }
        out.at(cell, 2) = dir.x;
        out.at(cell, 3) = dir.y;
      }
      out.at(cell, 4) = s.ego_start.speed / 10.0;
    }
  }
  return out;
}

// -- world model -- //

WorldModel::WorldModel(const WorldModelConfig& cfg, const geom::GridSpec& grid)
    : cfg_(cfg), grid_(grid) {
  const int enc_k = 2 * cfg.encoder_radius + 1;
  encoder_ = nnet::DenseNet{
      {kRasterPlanes * enc_k * enc_k, cfg.encoder_hidden, cfg.channels}};
  const int dec_k = 2 * cfg.decoder_radius + 1;
  decoder_ = nnet::DenseNet{{cfg.channels * dec_k * dec_k + 2 * cfg.horizon_steps,
                             cfg.decoder_hidden, cfg.channels}};
}

size_t WorldModel::param_count() const {
  return encoder_.param_count() + decoder_.param_count();
}

nnet::Tape::Id WorldModel::encode_on_tape(nnet::Tape& t, const Scenario& s,
                                          size_t offset) const {
  nnet::Tape::Id raster = t.constant(rasterize(s, grid_));
  if (cfg_.encoder_radius > 0) {
    raster = t.stencil(raster, grid_.height, grid_.width, cfg_.encoder_radius);
  }
  return encoder_.apply(t, raster, offset + encoder_offset());
}

nnet::Tape::Id WorldModel::predict_on_tape(nnet::Tape& t, nnet::Tape::Id latent,
                                           nnet::Tape::Id traj_points,
                                           size_t offset) const {
  const nnet::Mat& tv = t.val(traj_points);
  if (tv.rows != cfg_.horizon_steps || tv.cols != 2) {
    throw nnet::ShapeError("predict_on_tape: trajectory shape mismatch");
  }
  const nnet::Tape::Id st =
      t.stencil(latent, grid_.height, grid_.width, cfg_.decoder_radius);
  const nnet::Tape::Id flat =
      t.reshape(t.scale(traj_points, cfg_.coord_scale), 1, 2 * cfg_.horizon_steps);
  nnet::Mat ones(grid_.cell_count(), 1);
  for (double& x : ones.data) x = 1.0;
  const nnet::Tape::Id tiled = t.matmul(t.constant(std::move(ones)), flat);
  const nnet::Tape::Id joined =
      t.concat_cols(std::vector<nnet::Tape::Id>{st, tiled});
  return decoder_.apply(t, joined, offset + decoder_offset());
}

LatentGrid WorldModel::encode(const Scenario& s,
                              std::span<const double> params) const {
  nnet::Tape t(params);
  const nnet::Tape::Id latent = encode_on_tape(t, s, 0);
  LatentGrid out(grid_, cfg_.channels);
  out.values = t.val(latent).data;
  return out;
}

LatentGrid WorldModel::predict_next(const LatentGrid& latent,
                                    const geom::Trajectory& traj,
                                    std::span<const double> params) const {
  if (latent.channels != cfg_.channels ||
      latent.spec.cell_count() != grid_.cell_count()) {
    throw nnet::ShapeError("predict_next: latent grid shape mismatch");
  }
  nnet::Tape t(params);
  const nnet::Tape::Id lid = t.constant(
      nnet::Mat(grid_.cell_count(), cfg_.channels, latent.values));
  nnet::Mat pts(cfg_.horizon_steps, 2);
  if (traj.points.size() != static_cast<size_t>(cfg_.horizon_steps)) {
    throw nnet::ShapeError("predict_next: trajectory length mismatch");
  }
  for (int j = 0; j < cfg_.horizon_steps; ++j) {
    pts.at(j, 0) = traj.points[j].x;
    pts.at(j, 1) = traj.points[j].y;
  }
  const nnet::Tape::Id next =
      predict_on_tape(t, lid, t.constant(std::move(pts)), 0);
  LatentGrid out(grid_, cfg_.channels);
  out.values = t.val(next).data;
  return out;
}

double reconstruction_loss(const LatentGrid& predicted,
                           const LatentGrid& actual) {
  if (predicted.values.size() != actual.values.size() ||
      predicted.channels != actual.channels) {
    throw nnet::ShapeError("reconstruction_loss: grid shape mismatch");
  }
  if (predicted.values.empty()) {
    throw nnet::ShapeError("reconstruction_loss: empty grids");
  }
  double acc = 0.0;
  for (size_t k = 0; k < predicted.values.size(); ++k) {
    const double d = predicted.values[k] - actual.values[k];
    acc += d * d;
  }
  return acc / static_cast<double>(predicted.values.size());
}

}  // namespace latentplan::world
