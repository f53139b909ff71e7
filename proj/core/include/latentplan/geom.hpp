#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

namespace latentplan::geom {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Thrown when an input violates a geometric precondition (non-finite
// coordinate, degenerate polygon, non-positive extent, ...).
struct GeometryError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2 operator+(Point2 o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(Point2 o) const { return {x - o.x, y - o.y}; }
  Point2 operator*(double k) const { return {x * k, y * k}; }
  bool operator==(const Point2&) const = default;
};

double dot(Point2 a, Point2 b);
double cross(Point2 a, Point2 b);
double norm(Point2 a);
double distance(Point2 a, Point2 b);
Point2 rotate(Point2 p, double angle);
bool is_finite(Point2 p);

// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

// Rigid transform between a local frame (anchored at `origin` with
// `heading` against world x) and the world frame.
Point2 local_to_world(Point2 local, Point2 origin, double heading);
Point2 world_to_local(Point2 world, Point2 origin, double heading);

// Rectangle with center, half extents (hx, hy) > 0 and heading in radians.
struct OrientedBox {
  Point2 center;
  Point2 half_extents{1.0, 1.0};
  double heading = 0.0;

  std::array<Point2, 4> corners() const;
};

// Closed-set overlap test via separating axes: boxes that merely touch
// count as overlapping. Throws GeometryError on non-finite fields or
// non-positive extents.
bool obb_overlap(const OrientedBox& a, const OrientedBox& b);

// Simple polygon, vertices in counter-clockwise order.
struct Polygon2 {
  std::vector<Point2> vertices;

  double signed_area() const;
};

// Ray-casting containment test; points on an edge count as inside.
// Throws GeometryError for polygons with fewer than 3 vertices,
// non-finite coordinates, or non-positive signed area.
bool point_in_polygon(Point2 p, const Polygon2& poly);

// Future positions in a local frame, one point per step of `dt` seconds.
// points[j] is the pose at time (j+1)*dt.
struct Trajectory {
  std::vector<Point2> points;
  double dt = 0.5;
};

// Per-step displacements; prefix sums recover the trajectory points.
struct IncrementSeq {
  std::vector<Point2> deltas;
  double dt = 0.5;
};

// Prefix sums of the deltas starting from (0, 0).
Trajectory integrate_increments(const IncrementSeq& inc);

// Inverse of integrate_increments, exact in floating point: the deltas
// are adjusted by ulp steps so that re-integration reproduces the input
// points bit for bit. Throws GeometryError if no such deltas exist
// (wildly mismatched magnitudes).
IncrementSeq differentiate(const Trajectory& traj);

// Uniform grid over a rectangle. `origin` is the world position of the
// corner of cell (0, 0); cells are squares of side `cell_size`.
struct GridSpec {
  Point2 origin;
  double cell_size = 1.0;
  int width = 0;
  int height = 0;

  int cell_count() const { return width * height; }
  // Center of cell (i, j) in world coordinates.
  Point2 cell_center(int i, int j) const;
};

struct GridProjection {
  int cell_i = 0;  // column, along x
  int cell_j = 0;  // row, along y
  double frac_u = 0.0;
  double frac_v = 0.0;
  bool clamped = false;  // point fell outside the grid and was clamped
};

GridProjection project_to_grid(Point2 p, const GridSpec& spec);

// -- polyline helpers -- //

double polyline_length(std::span<const Point2> pts);

// Walks the polyline from `start` taking chords of exactly `step`
// meters: each output point lies at Euclidean distance `step` from the
// previous one. Past the end of the polyline the walk continues
// straight along the final direction, so `count` points always come
// back. The polyline must contain at least one point distinct from
// `start`.
std::vector<Point2> chord_resample(Point2 start, std::span<const Point2> pts,
                                   double step, int count);

// Arc length of the closest-point projection of `p` onto the polyline.
double project_arclength(std::span<const Point2> pts, Point2 p);

// Headings along a point sequence by finite differences from the
// previous point (the first point differences against `origin`). Steps
// shorter than `min_step` reuse the previous heading; the chain starts
// from `initial_heading`.
std::vector<double> motion_headings(std::span<const Point2> pts, Point2 origin,
                                    double initial_heading,
                                    double min_step = 1e-9);

}  // namespace latentplan::geom
