#include "latentplan/planner.hpp"

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>

namespace latentplan::planner {

using nnet::Mat;
using nnet::ShapeError;
using nnet::Tape;

namespace {

// Each of the three queries sees the same one-hot command.
Mat command_rows(world::Command cmd) {
  Mat m(3, 3);
  const int hot = static_cast<int>(cmd);
  for (int r = 0; r < 3; ++r) m.at(r, hot) = 1.0;
  return m;
}

std::vector<geom::Point2> rows_to_points(const Mat& m) {
  std::vector<geom::Point2> out(static_cast<size_t>(m.rows));
  for (int r = 0; r < m.rows; ++r) out[r] = {m.at(r, 0), m.at(r, 1)};
  return out;
}

geom::Point2 row_point(const Mat& m) { return {m.at(0, 0), m.at(0, 1)}; }

}  // namespace

Planner::Planner(const PlannerConfig& cfg, const geom::GridSpec& grid,
                 int latent_channels)
    : cfg_(cfg), grid_(grid), channels_(latent_channels) {
  if (cfg_.query_dim <= 0 || cfg_.key_dim <= 0 || cfg_.path_points <= 0 ||
      cfg_.traj_steps <= 0 || cfg_.refine_iters < 0 || cfg_.state_dim <= 0 ||
      cfg_.b_dim <= 0 || cfg_.head_hidden <= 0 || cfg_.fusion_hidden <= 0 ||
      channels_ <= 0 || grid_.cell_count() <= 0)
    throw std::invalid_argument("Planner: invalid configuration");

  const int d = cfg_.query_dim;
  const int f = channels_ + kPosEncDims;
  const int n = cfg_.path_points;
  const int t = cfg_.traj_steps;
  const int s = cfg_.state_dim;
  const int b = cfg_.b_dim;
  const auto tanh = nnet::Activation::kTanh;

  stage1_query_ = {{d + 3, cfg_.key_dim}, tanh};
  stage1_key_ = {{f, cfg_.key_dim}, tanh};
  stage1_value_ = {{f, d}, tanh};
  stage2_query_ = {{d, cfg_.key_dim}, tanh};
  stage2_key_ = {{d, cfg_.key_dim}, tanh};
  stage2_value_ = {{d, d}, tanh};
  head_target_ = {{d, cfg_.head_hidden, 4}, tanh};
  head_path_ = {{d, cfg_.head_hidden, 2 * n}, tanh};
  head_traj_ = {{d, cfg_.head_hidden, 2 * t}, tanh};
  state_net_ = {{4 + 2 * n + 2 * t, s, s}, tanh};
  b_net_ = {{2, b}, tanh};
  offset_target_ = {{d + s, cfg_.head_hidden, 2}, tanh};
  offset_path_ = {{d + s, cfg_.head_hidden, 2 * n}, tanh};
  offset_traj_ = {{d + s, cfg_.head_hidden, 2 * t}, tanh};
  delta_target_ = {{channels_ + d + s + b, cfg_.fusion_hidden, 4}, tanh};
  delta_path_ = {{channels_ * n + d + s + b, cfg_.fusion_hidden, 2 * n}, tanh};
  delta_traj_ = {{channels_ * t + d + s + b, cfg_.fusion_hidden, 2 * t}, tanh};

  auto raw_group = [&](std::string name, size_t count) {
    groups_.push_back({std::move(name), total_params_, count});
    group_nets_.push_back(nullptr);
    zero_last_.push_back(false);
    total_params_ += count;
  };
  auto net_group = [&](std::string name, const nnet::DenseNet* net,
                       bool zero_last) {
    groups_.push_back({std::move(name), total_params_, net->param_count()});
    group_nets_.push_back(net);
    zero_last_.push_back(zero_last);
    total_params_ += net->param_count();
  };
  raw_group("queries", static_cast<size_t>(3) * d);
  net_group("stage1_query", &stage1_query_, false);
  net_group("stage1_key", &stage1_key_, false);
  net_group("stage1_value", &stage1_value_, false);
  net_group("stage2_query", &stage2_query_, false);
  net_group("stage2_key", &stage2_key_, false);
  net_group("stage2_value", &stage2_value_, false);
  net_group("head_target", &head_target_, false);
  net_group("head_path", &head_path_, false);
  net_group("head_traj", &head_traj_, false);
  net_group("state", &state_net_, false);
  net_group("scale_feat", &b_net_, false);
  net_group("offset_target", &offset_target_, true);
  net_group("offset_path", &offset_path_, true);
  net_group("offset_traj", &offset_traj_, true);
  net_group("delta_target", &delta_target_, true);
  net_group("delta_path", &delta_path_, true);
  net_group("delta_traj", &delta_traj_, true);
}

const Planner::Group& Planner::group(std::string_view name) const {
  for (const auto& g : groups_)
    if (g.name == name) return g;
  throw std::invalid_argument("Planner: unknown parameter group " +
                              std::string(name));
}

void Planner::init_params(std::span<double> dst, uint64_t master_seed) const {
  if (dst.size() != total_params_)
    throw ShapeError("Planner::init_params: span size mismatch");
  for (size_t i = 0; i < groups_.size(); ++i) {
    Rng rng(master_seed, "planner." + groups_[i].name);
    auto block = dst.subspan(groups_[i].offset, groups_[i].count);
    if (const nnet::DenseNet* net = group_nets_[i]) {
      net->init_params(block, rng);
      if (zero_last_[i]) {
        auto last = block.subspan(net->last_layer_offset(),
                                  net->last_layer_count());
        for (double& v : last) v = 0.0;
      }
    } else {
      const double lim = std::sqrt(3.0 / cfg_.query_dim);
      for (double& v : block) v = rng.uniform(-lim, lim);
    }
  }
}

Mat Planner::posenc_matrix() const {
  Mat m(grid_.cell_count(), kPosEncDims);
  for (int j = 0; j < grid_.height; ++j) {
    for (int i = 0; i < grid_.width; ++i) {
      const int cell = j * grid_.width + i;
      const double u = (i + 0.5) / grid_.width;
      const double v = (j + 0.5) / grid_.height;
      m.at(cell, 0) = u;
      m.at(cell, 1) = v;
      m.at(cell, 2) = std::sin(2.0 * geom::kPi * u);
      m.at(cell, 3) = std::cos(2.0 * geom::kPi * u);
      m.at(cell, 4) = std::sin(2.0 * geom::kPi * v);
      m.at(cell, 5) = std::cos(2.0 * geom::kPi * v);
    }
  }
  return m;
}

Mat Planner::latent_matrix(const world::LatentGrid& w) const {
  if (w.channels != channels_ || w.spec.width != grid_.width ||
      w.spec.height != grid_.height)
    throw ShapeError("Planner: latent grid does not match this planner");
  return Mat(grid_.cell_count(), channels_, w.values);
}

Planner::FusedQueries Planner::fuse_queries(Tape& t, Tape::Id features,
                                            world::Command cmd,
                                            size_t offset) const {
  const Mat& fv = t.val(features);
  if (fv.cols != channels_ + kPosEncDims || fv.rows < 1)
    throw ShapeError("Planner: bad cell feature shape");
  auto off = [&](std::string_view name) { return offset + group(name).offset; };
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(cfg_.key_dim));

  const Tape::Id q_param =
      t.param(offset + group("queries").offset, 3, cfg_.query_dim);
  const Tape::Id cmd_rows = t.constant(command_rows(cmd));
  const std::array<Tape::Id, 2> q0_parts{q_param, cmd_rows};
  const Tape::Id q0 = t.concat_cols(q0_parts);

  // Stage one: cross attention over the grid, no residual.
  const Tape::Id q1 = stage1_query_.apply(t, q0, off("stage1_query"));
  const Tape::Id k1 = stage1_key_.apply(t, features, off("stage1_key"));
  const Tape::Id v1 = stage1_value_.apply(t, features, off("stage1_value"));
  const Tape::Id attn_grid =
      t.softmax_rows(t.scale(t.matmul_nt(q1, k1), inv_sqrt_k));
  const Tape::Id q_mid = t.matmul(attn_grid, v1);

  // Stage two: self attention among the three queries, with residual.
  const Tape::Id q2 = stage2_query_.apply(t, q_mid, off("stage2_query"));
  const Tape::Id k2 = stage2_key_.apply(t, q_mid, off("stage2_key"));
  const Tape::Id v2 = stage2_value_.apply(t, q_mid, off("stage2_value"));
  const Tape::Id attn_self =
      t.softmax_rows(t.scale(t.matmul_nt(q2, k2), inv_sqrt_k));
  const Tape::Id q_final = t.add(q_mid, t.matmul(attn_self, v2));

  return {q_final, attn_grid, attn_self};
}

Tape::Id Planner::grid_coords(Tape& t, Tape::Id pts) const {
  const int n = t.val(pts).rows;
  Mat shift(n, 2);
  for (int r = 0; r < n; ++r) {
    shift.at(r, 0) = grid_.origin.x / grid_.cell_size + 0.5;
    shift.at(r, 1) = grid_.origin.y / grid_.cell_size + 0.5;
  }
  return t.sub(t.scale(pts, 1.0 / grid_.cell_size), t.constant(shift));
}

Tape::Id Planner::state_encoding(Tape& t, const RefineState& s,
                                 size_t offset) const {
  const std::array<Tape::Id, 4> parts{
      s.mu, s.b, t.reshape(s.path, 1, 2 * cfg_.path_points),
      t.reshape(s.inc, 1, 2 * cfg_.traj_steps)};
  const Tape::Id vec = t.scale(t.concat_cols(parts), cfg_.coord_scale);
  return state_net_.apply(t, vec, offset + group("state").offset);
}

Planner::RefineState Planner::refine_sweeps(
    Tape& t, Tape::Id latent, Tape::Id q_target, Tape::Id q_path,
    Tape::Id q_traj, RefineState state, size_t offset, int iters, double alpha,
    std::vector<TapePlan::Iterate>* history) const {
  auto off = [&](std::string_view name) { return offset + group(name).offset; };
  const int n = cfg_.path_points;
  const int horizon = cfg_.traj_steps;

  for (int k = 0; k < iters; ++k) {
    // Every subtask reads the plan as it stood at the top of the sweep.
    const Tape::Id f_state = state_encoding(t, state, offset);
    const Tape::Id f_b = b_net_.apply(t, state.b, off("scale_feat"));
    const Tape::Id traj_pts = t.cumsum_rows(state.inc);

    auto subtask = [&](Tape::Id q, Tape::Id pts, const nnet::DenseNet& off_net,
                       size_t off_at, const nnet::DenseNet& delta_net,
                       size_t delta_at, int points) {
      const std::array<Tape::Id, 2> off_in{q, f_state};
      const Tape::Id learned =
          t.reshape(off_net.apply(t, t.concat_cols(off_in), off_at), points, 2);
      const Tape::Id coords = grid_coords(t, t.add(pts, learned));
      const Tape::Id local =
          t.bilinear(latent, coords, grid_.height, grid_.width);
      const std::array<Tape::Id, 4> fuse{
          t.reshape(local, 1, points * channels_), q, f_state, f_b};
      return delta_net.apply(t, t.concat_cols(fuse), delta_at);
    };

    const Tape::Id d_target =
        subtask(q_target, state.mu, offset_target_, off("offset_target"),
                delta_target_, off("delta_target"), 1);
    const Tape::Id d_path =
        subtask(q_path, state.path, offset_path_, off("offset_path"),
                delta_path_, off("delta_path"), n);
    const Tape::Id d_traj =
        subtask(q_traj, traj_pts, offset_traj_, off("offset_traj"),
                delta_traj_, off("delta_traj"), horizon);

    RefineState next;
    next.mu = t.add_scaled(state.mu, t.slice_cols(d_target, 0, 2), alpha);
    next.raw_b = t.add_scaled(state.raw_b, t.slice_cols(d_target, 2, 2), alpha);
    next.b = t.add_scalar(t.softplus(next.raw_b), cfg_.b_floor);
    next.path = t.add_scaled(state.path, t.reshape(d_path, n, 2), alpha);
    next.inc = t.add_scaled(state.inc, t.reshape(d_traj, horizon, 2), alpha);
    state = next;
    if (history)
      history->push_back(
          {state.mu, state.raw_b, state.b, state.path, state.inc});
  }
  return state;
}

Planner::TapePlan Planner::plan_on_tape(Tape& t, Tape::Id latent,
                                        world::Command cmd, size_t offset,
                                        int iters) const {
  const Mat& lv = t.val(latent);
  if (lv.rows != grid_.cell_count() || lv.cols != channels_)
    throw ShapeError("Planner::plan_on_tape: bad latent shape");
  const int k_iters = iters < 0 ? cfg_.refine_iters : iters;
  auto off = [&](std::string_view name) { return offset + group(name).offset; };

  const std::array<Tape::Id, 2> feat_parts{latent,
                                           t.constant(posenc_matrix())};
  const Tape::Id features = t.concat_cols(feat_parts);
  const FusedQueries fused = fuse_queries(t, features, cmd, offset);

  const Tape::Id q_target = t.slice_rows(fused.q_final, 0, 1);
  const Tape::Id q_path = t.slice_rows(fused.q_final, 1, 1);
  const Tape::Id q_traj = t.slice_rows(fused.q_final, 2, 1);

  const Tape::Id head = head_target_.apply(t, q_target, off("head_target"));
  RefineState state;
  state.mu = t.slice_cols(head, 0, 2);
  state.raw_b = t.slice_cols(head, 2, 2);
  state.b = t.add_scalar(t.softplus(state.raw_b), cfg_.b_floor);
  state.path = t.reshape(head_path_.apply(t, q_path, off("head_path")),
                         cfg_.path_points, 2);
  state.inc = t.reshape(head_traj_.apply(t, q_traj, off("head_traj")),
                        cfg_.traj_steps, 2);

  TapePlan tp;
  tp.queries = fused.q_final;
  tp.attn_grid = fused.attn_grid;
  tp.attn_self = fused.attn_self;
  tp.history.push_back(
      {state.mu, state.raw_b, state.b, state.path, state.inc});

  state = refine_sweeps(t, latent, q_target, q_path, q_traj, state, offset,
                        k_iters, cfg_.refine_alpha, &tp.history);

  tp.mu = state.mu;
  tp.raw_b = state.raw_b;
  tp.b = state.b;
  tp.path = state.path;
  tp.increments = state.inc;
  tp.traj_points = t.cumsum_rows(state.inc);
  tp.state_feature = state_encoding(t, state, offset);
  return tp;
}

Mat Planner::cell_features(const world::LatentGrid& w) const {
  const Mat latent = latent_matrix(w);
  const Mat pos = posenc_matrix();
  Mat out(latent.rows, latent.cols + pos.cols);
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < latent.cols; ++c) out.at(r, c) = latent.at(r, c);
    for (int c = 0; c < pos.cols; ++c)
      out.at(r, latent.cols + c) = pos.at(r, c);
  }
  return out;
}

Planner::QueryInteraction Planner::query_interact(
    const world::LatentGrid& w, world::Command cmd,
    std::span<const double> params) const {
  return query_interact_features(cell_features(w), cmd, params);
}

Planner::QueryInteraction Planner::query_interact_features(
    const Mat& features, world::Command cmd,
    std::span<const double> params) const {
  if (params.size() != total_params_)
    throw ShapeError("Planner::query_interact: parameter span size mismatch");
  Tape t(params);
  const FusedQueries fused = fuse_queries(t, t.constant(features), cmd, 0);
  return {t.val(fused.q_final), t.val(fused.attn_grid), t.val(fused.attn_self)};
}

namespace {

// Accepts either the full 3-row fused query matrix or the single
// relevant row.
Tape::Id pick_query_row(Tape& t, const Mat& queries, int row, int dim) {
  if (queries.cols != dim)
    throw ShapeError("Planner: query width mismatch");
  if (queries.rows == 1) return t.constant(queries);
  if (queries.rows == 3) return t.slice_rows(t.constant(queries), row, 1);
  throw ShapeError("Planner: queries must have 1 or 3 rows");
}

}  // namespace

TargetRegion Planner::decode_target(const Mat& queries,
                                    std::span<const double> params) const {
  if (params.size() != total_params_)
    throw ShapeError("Planner::decode_target: parameter span size mismatch");
  Tape t(params);
  const Tape::Id q = pick_query_row(t, queries, 0, cfg_.query_dim);
  const Tape::Id head = head_target_.apply(t, q, group("head_target").offset);
  const Tape::Id b =
      t.add_scalar(t.softplus(t.slice_cols(head, 2, 2)), cfg_.b_floor);
  TargetRegion out;
  out.mu = row_point(t.val(t.slice_cols(head, 0, 2)));
  out.b = row_point(t.val(b));
  return out;
}

SpatialPath Planner::decode_path(const Mat& queries,
                                 std::span<const double> params) const {
  if (params.size() != total_params_)
    throw ShapeError("Planner::decode_path: parameter span size mismatch");
  Tape t(params);
  const Tape::Id q = pick_query_row(t, queries, 1, cfg_.query_dim);
  const Tape::Id head = t.reshape(
      head_path_.apply(t, q, group("head_path").offset), cfg_.path_points, 2);
  return {rows_to_points(t.val(head))};
}

geom::IncrementSeq Planner::decode_traj(const Mat& queries,
                                        std::span<const double> params) const {
  if (params.size() != total_params_)
    throw ShapeError("Planner::decode_traj: parameter span size mismatch");
  Tape t(params);
  const Tape::Id q = pick_query_row(t, queries, 2, cfg_.query_dim);
  const Tape::Id head = t.reshape(
      head_traj_.apply(t, q, group("head_traj").offset), cfg_.traj_steps, 2);
  geom::IncrementSeq out;
  out.deltas = rows_to_points(t.val(head));
  return out;
}

PlanOutput Planner::extract_plan(const Tape& t, const TapePlan& tp) const {
  PlanOutput out;
  out.target.mu = row_point(t.val(tp.mu));
  out.target.b = row_point(t.val(tp.b));
  out.target_raw_b = row_point(t.val(tp.raw_b));
  out.path.points = rows_to_points(t.val(tp.path));
  out.increments.deltas = rows_to_points(t.val(tp.increments));
  out.trajectory.points = rows_to_points(t.val(tp.traj_points));
  out.history.reserve(tp.history.size());
  for (const auto& it : tp.history) {
    PlanIterate pi;
    pi.target.mu = row_point(t.val(it.mu));
    pi.target.b = row_point(t.val(it.b));
    pi.target_raw_b = row_point(t.val(it.raw_b));
    pi.path.points = rows_to_points(t.val(it.path));
    pi.increments.deltas = rows_to_points(t.val(it.increments));
    out.history.push_back(std::move(pi));
  }
  return out;
}

PlanOutput Planner::plan(const world::LatentGrid& w, world::Command cmd,
                         std::span<const double> params, int iters) const {
  if (params.size() != total_params_)
    throw ShapeError("Planner::plan: parameter span size mismatch");
  Tape t(params);
  const Tape::Id latent = t.constant(latent_matrix(w));
  const TapePlan tp = plan_on_tape(t, latent, cmd, 0, iters);
  return extract_plan(t, tp);
}

PlanOutput Planner::refine(const PlanOutput& start, const Mat& queries,
                           const world::LatentGrid& w,
                           std::span<const double> params, int iters,
                           double alpha) const {
  if (iters < 0)
    throw std::invalid_argument("Planner::refine: negative iteration count");
  if (params.size() != total_params_)
    throw ShapeError("Planner::refine: parameter span size mismatch");
  if (queries.rows != 3 || queries.cols != cfg_.query_dim)
    throw ShapeError("Planner::refine: queries must be 3 x query_dim");
  if (static_cast<int>(start.path.points.size()) != cfg_.path_points ||
      static_cast<int>(start.increments.deltas.size()) != cfg_.traj_steps)
    throw ShapeError("Planner::refine: starting plan has the wrong shape");

  Tape t(params);
  const Tape::Id latent = t.constant(latent_matrix(w));
  const Tape::Id qf = t.constant(queries);
  const Tape::Id q_target = t.slice_rows(qf, 0, 1);
  const Tape::Id q_path = t.slice_rows(qf, 1, 1);
  const Tape::Id q_traj = t.slice_rows(qf, 2, 1);

  Mat mu(1, 2), raw_b(1, 2);
  mu.at(0, 0) = start.target.mu.x;
  mu.at(0, 1) = start.target.mu.y;
  raw_b.at(0, 0) = start.target_raw_b.x;
  raw_b.at(0, 1) = start.target_raw_b.y;
  Mat path(cfg_.path_points, 2), inc(cfg_.traj_steps, 2);
  for (int r = 0; r < cfg_.path_points; ++r) {
    path.at(r, 0) = start.path.points[r].x;
    path.at(r, 1) = start.path.points[r].y;
  }
  for (int r = 0; r < cfg_.traj_steps; ++r) {
    inc.at(r, 0) = start.increments.deltas[r].x;
    inc.at(r, 1) = start.increments.deltas[r].y;
  }

  RefineState state;
  state.mu = t.constant(mu);
  state.raw_b = t.constant(raw_b);
  state.b = t.add_scalar(t.softplus(state.raw_b), cfg_.b_floor);
  state.path = t.constant(path);
  state.inc = t.constant(inc);

  TapePlan tp;
  tp.queries = qf;
  tp.attn_grid = qf;
  tp.attn_self = qf;
  tp.history.push_back(
      {state.mu, state.raw_b, state.b, state.path, state.inc});
  state = refine_sweeps(t, latent, q_target, q_path, q_traj, state, 0, iters,
                        alpha, &tp.history);
  tp.mu = state.mu;
  tp.raw_b = state.raw_b;
  tp.b = state.b;
  tp.path = state.path;
  tp.increments = state.inc;
  tp.traj_points = t.cumsum_rows(state.inc);
  return extract_plan(t, tp);
}

}  // namespace latentplan::planner
