#include "latentplan/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentplan::geom {

double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }

double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }

double norm(Point2 a) { return std::hypot(a.x, a.y); }

double distance(Point2 a, Point2 b) { return norm(a - b); }

Point2 rotate(Point2 p, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

bool is_finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

Point2 local_to_world(Point2 local, Point2 origin, double heading) {
  return origin + rotate(local, heading);
}

Point2 world_to_local(Point2 world, Point2 origin, double heading) {
  return rotate(world - origin, -heading);
}

// -- oriented boxes -- //

std::array<Point2, 4> OrientedBox::corners() const {
  const Point2 ax = rotate({1.0, 0.0}, heading);
  const Point2 ay = rotate({0.0, 1.0}, heading);
  const Point2 ex = ax * half_extents.x;
  const Point2 ey = ay * half_extents.y;
  return {center + ex + ey, center - ex + ey, center - ex - ey,
          center + ex - ey};
}

namespace {

void check_box(const OrientedBox& b, const char* label) {
  if (!is_finite(b.center) || !is_finite(b.half_extents) ||
      !std::isfinite(b.heading)) {
    throw GeometryError(std::string(label) + ": non-finite box field");
  }
  if (b.half_extents.x <= 0.0 || b.half_extents.y <= 0.0) {
    throw GeometryError(std::string(label) + ": half extents must be > 0");
  }
}

// Projection radius of a box onto unit axis u, around its center.
double projected_radius(const OrientedBox& b, Point2 u) {
  const Point2 ax = rotate({1.0, 0.0}, b.heading);
  const Point2 ay = rotate({0.0, 1.0}, b.heading);
  return b.half_extents.x * std::abs(dot(ax, u)) +
         b.half_extents.y * std::abs(dot(ay, u));
}

}  // namespace

bool obb_overlap(const OrientedBox& a, const OrientedBox& b) {
  check_box(a, "obb_overlap: first box");
  check_box(b, "obb_overlap: second box");

  const Point2 d = b.center - a.center;
  const std::array<Point2, 4> axes = {
      rotate({1.0, 0.0}, a.heading), rotate({0.0, 1.0}, a.heading),
      rotate({1.0, 0.0}, b.heading), rotate({0.0, 1.0}, b.heading)};
  for (const Point2& u : axes) {
    const double gap =
        std::abs(dot(d, u)) - projected_radius(a, u) - projected_radius(b, u);
    // Strict inequality keeps touching boxes in the overlapping class.
    if (gap > 0.0) return false;
  }
  return true;
}

// -- polygons -- //

double Polygon2::signed_area() const {
  double acc = 0.0;
  const size_t n = vertices.size();
  for (size_t i = 0; i < n; ++i) {
    acc += cross(vertices[i], vertices[(i + 1) % n]);
  }
  return 0.5 * acc;
}

namespace {

bool on_segment(Point2 p, Point2 a, Point2 b) {
  if (cross(b - a, p - a) != 0.0) return false;
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

}  // namespace

bool point_in_polygon(Point2 p, const Polygon2& poly) {
  const auto& v = poly.vertices;
  if (v.size() < 3) {
    throw GeometryError("point_in_polygon: need at least 3 vertices");
  }
  if (!is_finite(p)) {
    throw GeometryError("point_in_polygon: non-finite query point");
  }
  for (const Point2& q : v) {
    if (!is_finite(q)) {
      throw GeometryError("point_in_polygon: non-finite vertex");
    }
  }
  if (poly.signed_area() <= 0.0) {
    throw GeometryError(
        "point_in_polygon: polygon must be counter-clockwise with positive "
        "area");
  }

  const size_t n = v.size();
  for (size_t i = 0; i < n; ++i) {
    if (on_segment(p, v[i], v[(i + 1) % n])) return true;
  }

  // Cast a ray towards +x and count crossings. The half-open vertex rule
  // ((ay > py) != (by > py)) counts each vertex hit exactly once.
  bool inside = false;
  for (size_t i = 0; i < n; ++i) {
    const Point2 a = v[i];
    const Point2 b = v[(i + 1) % n];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

// -- trajectories -- //

Trajectory integrate_increments(const IncrementSeq& inc) {
  Trajectory out;
  out.dt = inc.dt;
  out.points.reserve(inc.deltas.size());
  Point2 acc;
  for (const Point2& d : inc.deltas) {
    acc = acc + d;
    out.points.push_back(acc);
  }
  return out;
}

namespace {

// Finds d with fl(acc + d) == target exactly. The naive difference is
// refined by the residual, then by single-ulp steps. Fails when no
// representable d reaches the target, which happens only under severe
// cancellation (the sum's rounding grid is coarser than the target's
// ulp, e.g. a jump from 1e16 to 1).
double exact_delta(double acc, double target) {
  if (!std::isfinite(acc) || !std::isfinite(target)) {
    throw GeometryError("differentiate: non-finite coordinate");
  }
  double d = target - acc;
  for (int iter = 0; iter < 8; ++iter) {
    const double s = acc + d;
    if (s == target) return d;
    const double corrected = d + (target - s);
    if (corrected == d) break;
    d = corrected;
  }
  for (int iter = 0; iter < 64; ++iter) {
    const double s = acc + d;
    if (s == target) return d;
    d = std::nextafter(d, s < target ? std::numeric_limits<double>::infinity()
                                     : -std::numeric_limits<double>::infinity());
  }
  throw GeometryError(
      "differentiate: no increment reproduces the point exactly");
}

}  // namespace

IncrementSeq differentiate(const Trajectory& traj) {
  IncrementSeq out;
  out.dt = traj.dt;
  out.deltas.reserve(traj.points.size());
  Point2 acc;
  for (const Point2& p : traj.points) {
    const Point2 d{exact_delta(acc.x, p.x), exact_delta(acc.y, p.y)};
    out.deltas.push_back(d);
    acc = acc + d;  // lands on p bit for bit
  }
  return out;
}

// -- grids -- //

Point2 GridSpec::cell_center(int i, int j) const {
  return {origin.x + (i + 0.5) * cell_size, origin.y + (j + 0.5) * cell_size};
}

GridProjection project_to_grid(Point2 p, const GridSpec& spec) {
  if (!is_finite(p)) {
    throw GeometryError("project_to_grid: non-finite point");
  }
  if (!(spec.cell_size > 0.0) || spec.width <= 0 || spec.height <= 0) {
    throw GeometryError("project_to_grid: invalid grid spec");
  }
  GridProjection out;
  const double u = (p.x - spec.origin.x) / spec.cell_size;
  const double v = (p.y - spec.origin.y) / spec.cell_size;
  auto split = [](double t, int cells, int& cell, double& frac, bool& clamp) {
    if (t < 0.0) {
      cell = 0;
      frac = 0.0;
      clamp = true;
    } else if (t > cells) {
      cell = cells - 1;
      frac = 1.0;
      clamp = true;
    } else {
      cell = std::min(static_cast<int>(std::floor(t)), cells - 1);
      frac = t - cell;  // 1.0 only for a point on the far boundary
    }
  };
  bool cx = false;
  bool cy = false;
  split(u, spec.width, out.cell_i, out.frac_u, cx);
  split(v, spec.height, out.cell_j, out.frac_v, cy);
  out.clamped = cx || cy;
  return out;
}

// -- polylines -- //

double polyline_length(std::span<const Point2> pts) {
  double acc = 0.0;
  for (size_t i = 1; i < pts.size(); ++i) {
    acc += distance(pts[i - 1], pts[i]);
  }
  return acc;
}

namespace {

// First t in [t_lo, t_hi] with |a + t*(b - a) - c| == r, or -1.
double segment_circle_hit(Point2 a, Point2 b, Point2 c, double r, double t_lo,
                          double t_hi) {
  const Point2 m = a - c;
  const Point2 d = b - a;
  const double qa = dot(d, d);
  const double qb = 2.0 * dot(m, d);
  const double qc = dot(m, m) - r * r;
  if (qa == 0.0) return -1.0;
  const double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) return -1.0;
  const double sq = std::sqrt(disc);
  // Prefer the earlier root that still moves forward.
  for (const double t : {(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)}) {
    if (t >= t_lo && t <= t_hi) return t;
  }
  return -1.0;
}

}  // namespace

std::vector<Point2> chord_resample(Point2 start, std::span<const Point2> pts,
                                   double step, int count) {
  if (!(step > 0.0)) {
    throw GeometryError("chord_resample: step must be > 0");
  }
  if (count < 0) {
    throw GeometryError("chord_resample: negative point count");
  }

  // Work on an extended polyline: start, the input points, then a long
  // straight continuation so the walk never runs out of line.
  std::vector<Point2> line;
  line.reserve(pts.size() + 2);
  line.push_back(start);
  for (const Point2& p : pts) {
    if (!is_finite(p)) throw GeometryError("chord_resample: non-finite point");
    if (distance(line.back(), p) > 0.0) line.push_back(p);
  }
  if (line.size() < 2) {
    throw GeometryError("chord_resample: polyline never leaves the start");
  }
  Point2 dir = line.back() - line[line.size() - 2];
  dir = dir * (1.0 / norm(dir));
  const double reach = step * (count + 1) + polyline_length(line);
  line.push_back(line.back() + dir * reach);

  std::vector<Point2> out;
  out.reserve(count);
  Point2 cur = start;
  size_t seg = 0;
  double t_cur = 0.0;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (size_t s = seg; s + 1 < line.size() && !placed; ++s) {
      const double lo = (s == seg) ? t_cur : 0.0;
      const double t = segment_circle_hit(line[s], line[s + 1], cur, step, lo, 1.0);
      if (t >= 0.0) {
        cur = line[s] + (line[s + 1] - line[s]) * t;
        seg = s;
        t_cur = t;
        placed = true;
      }
    }
    if (!placed) {
      throw GeometryError("chord_resample: walk failed to advance");
    }
    out.push_back(cur);
  }
  return out;
}

double project_arclength(std::span<const Point2> pts, Point2 p) {
  if (pts.empty()) {
    throw GeometryError("project_arclength: empty polyline");
  }
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_len = 0.0;
  double acc = 0.0;
  if (pts.size() == 1) return 0.0;
  for (size_t i = 0; i + 1 < pts.size(); ++i) {
    const Point2 a = pts[i];
    const Point2 b = pts[i + 1];
    const Point2 d = b - a;
    const double len2 = dot(d, d);
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp(dot(p - a, d) / len2, 0.0, 1.0);
    const Point2 q = a + d * t;
    const double d2 = dot(p - q, p - q);
    if (d2 < best_d2) {
      best_d2 = d2;
      best_len = acc + t * std::sqrt(len2);
    }
    acc += std::sqrt(len2);
  }
  return best_len;
}

std::vector<double> motion_headings(std::span<const Point2> pts, Point2 origin,
                                    double initial_heading, double min_step) {
  std::vector<double> out;
  out.reserve(pts.size());
  Point2 prev = origin;
  double heading = initial_heading;
  for (const Point2& p : pts) {
    const Point2 d = p - prev;
    if (norm(d) >= min_step) heading = std::atan2(d.y, d.x);
    out.push_back(heading);
    prev = p;
  }
  return out;
}

}  // namespace latentplan::geom
