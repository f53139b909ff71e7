#include "latentplan/imitation.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "latentplan/metrics.hpp"

namespace latentplan::imitation {

using geom::Point2;
using nnet::Mat;
using nnet::Tape;
using world::Scenario;

double laplace_nll(Point2 y, const planner::TargetRegion& region,
                   bool shared_scale) {
  const double bx = region.b.x;
  const double by = shared_scale ? region.b.x : region.b.y;
  if (!(bx > 0.0) || !(by > 0.0))
    throw std::domain_error("laplace_nll: non-positive scale");
  return std::log(2.0 * bx) + std::abs(y.x - region.mu.x) / bx +
         std::log(2.0 * by) + std::abs(y.y - region.mu.y) / by;
}

double traj_l1(std::span<const Point2> pred, std::span<const Point2> gt) {
  if (pred.size() != gt.size())
    throw nnet::ShapeError("traj_l1: point counts differ");
  if (pred.empty()) throw nnet::ShapeError("traj_l1: empty input");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    sum += std::abs(pred[i].x - gt[i].x) + std::abs(pred[i].y - gt[i].y);
  return sum / (2.0 * static_cast<double>(pred.size()));
}

Point2 gt_target(const Scenario& s) {
  if (s.expert.points.empty())
    throw std::invalid_argument("gt_target: scenario has no expert");
  return s.expert.points.back();
}

std::vector<Point2> gt_path(const Scenario& s, int count, double spacing) {
  return geom::chord_resample({0.0, 0.0}, s.expert.points, spacing, count);
}

namespace {

Mat points_matrix(std::span<const Point2> pts) {
  Mat m(static_cast<int>(pts.size()), 2);
  for (size_t i = 0; i < pts.size(); ++i) {
    m.at(static_cast<int>(i), 0) = pts[i].x;
    m.at(static_cast<int>(i), 1) = pts[i].y;
  }
  return m;
}

// sum_i [ log(2 b_i) + |y_i - mu_i| / b_i ] as a graph node.
Tape::Id laplace_node(Tape& t, Tape::Id mu, Tape::Id b, Point2 y,
                      bool shared_scale) {
  Tape::Id scale = b;
  if (shared_scale) {
    const Tape::Id bx = t.slice_cols(b, 0, 1);
    const std::array<Tape::Id, 2> both{bx, bx};
    scale = t.concat_cols(both);
  }
  Mat target(1, 2);
  target.at(0, 0) = y.x;
  target.at(0, 1) = y.y;
  const Tape::Id diff = t.abs_(t.sub(t.constant(target), mu));
  return t.sum(t.add(t.log_(t.scale(scale, 2.0)), t.div(diff, scale)));
}

Tape::Id l1_node(Tape& t, Tape::Id pred, const Mat& gt) {
  return t.mean(t.abs_(t.sub(pred, t.constant(gt))));
}

}  // namespace

LossNodes loss_on_tape(Tape& t, const model::Model& m, const Scenario& s,
                       const PretrainConfig& cfg) {
  const auto& pcfg = m.config().plan;
  const auto rollout = m.plan_on_tape(t, s);
  const auto& plan = rollout.plan;
  const size_t world_off = m.layout().find("world").offset;

  // World prediction: decode one step ahead, conditioned on the plan
  // (detached) or the expert, against the advanced scene's encoding.
  const Tape::Id conditioning =
      cfg.condition_on_expert ? t.constant(points_matrix(s.expert.points))
                              : t.detach(plan.traj_points);
  const Tape::Id predicted = m.world_model().predict_on_tape(
      t, rollout.latent, conditioning, world_off);
  const Tape::Id actual = t.detach(
      m.world_model().encode_on_tape(t, world::advance_one_step(s), world_off));
  const Tape::Id rec = t.mean(t.square(t.sub(predicted, actual)));

  const Point2 goal = gt_target(s);
  const Mat path_gt = points_matrix(
      gt_path(s, pcfg.path_points, pcfg.path_spacing));
  const Mat traj_gt = points_matrix(s.expert.points);

  Tape::Id target =
      laplace_node(t, plan.mu, plan.b, goal, cfg.shared_scale);
  Tape::Id path = l1_node(t, plan.path, path_gt);
  Tape::Id traj = l1_node(t, plan.traj_points, traj_gt);
  if (cfg.aux_weight != 0.0 && !plan.history.empty()) {
    const auto& first = plan.history.front();
    target = t.add_scaled(
        target, laplace_node(t, first.mu, first.b, goal, cfg.shared_scale),
        cfg.aux_weight);
    path = t.add_scaled(path, l1_node(t, first.path, path_gt),
                        cfg.aux_weight);
    traj = t.add_scaled(
        traj, l1_node(t, t.cumsum_rows(first.increments), traj_gt),
        cfg.aux_weight);
  }

  LossNodes nodes;
  nodes.rec = rec;
  nodes.target = target;
  nodes.path_l1 = path;
  nodes.traj_l1 = traj;
  nodes.total = t.add(t.add(t.scale(rec, cfg.beta), t.scale(target, cfg.gamma)),
                      t.scale(t.add(path, traj), cfg.eta));
  return nodes;
}

LossBreakdown compute_losses(const model::Model& m, const Scenario& s,
                             const planner::PlanOutput& plan,
                             std::span<const double> params,
                             const PretrainConfig& cfg) {
  const auto& pcfg = m.config().plan;
  const auto world_params = m.world_block(params);

  const world::LatentGrid latent = m.encode(s, params);
  const geom::Trajectory& conditioning =
      cfg.condition_on_expert ? s.expert : plan.trajectory;
  const world::LatentGrid predicted = m.world_model().predict_next(
      latent, conditioning, world_params);
  const world::LatentGrid actual = m.encode(world::advance_one_step(s), params);

  LossBreakdown out;
  out.rec = world::reconstruction_loss(predicted, actual);

  const Point2 goal = gt_target(s);
  const auto path_gt = gt_path(s, pcfg.path_points, pcfg.path_spacing);
  out.target = laplace_nll(goal, plan.target, cfg.shared_scale);
  out.path_l1 = traj_l1(plan.path.points, path_gt);
  out.traj_l1 = traj_l1(plan.trajectory.points, s.expert.points);
  if (cfg.aux_weight != 0.0 && !plan.history.empty()) {
    const auto& first = plan.history.front();
    out.target += cfg.aux_weight *
                  laplace_nll(goal, first.target, cfg.shared_scale);
    out.path_l1 += cfg.aux_weight * traj_l1(first.path.points, path_gt);
    const auto first_traj = geom::integrate_increments(first.increments);
    out.traj_l1 += cfg.aux_weight *
                   traj_l1(first_traj.points, s.expert.points);
  }
  out.total = cfg.beta * out.rec + cfg.gamma * out.target +
              cfg.eta * (out.path_l1 + out.traj_l1);
  return out;
}

PretrainResult pretrain(const model::Model& m,
                        std::span<const Scenario> corpus,
                        std::vector<double> params,
                        const PretrainConfig& cfg) {
  if (corpus.empty())
    throw std::invalid_argument("pretrain: empty corpus");
  if (params.size() != m.param_count())
    throw nnet::ShapeError("pretrain: parameter size mismatch");
  if (cfg.epochs < 0 || cfg.batch_size <= 0 ||
      cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0)
    throw std::invalid_argument("pretrain: bad configuration");

  const size_t val_count =
      static_cast<size_t>(cfg.val_fraction * static_cast<double>(corpus.size()));
  const size_t train_count = corpus.size() - val_count;
  if (train_count == 0) throw std::invalid_argument("pretrain: no training split");
  const auto train = corpus.subspan(0, train_count);
  const auto val = corpus.subspan(train_count);

  PretrainResult result;
  result.opt = cfg.optimizer == nnet::OptimizerKind::kAdam
                   ? nnet::OptimizerState::adam(cfg.learning_rate, params.size())
                   : nnet::OptimizerState::sgd(cfg.learning_rate);
  Rng shuffle_rng(cfg.seed, "pretrain.shuffle");

  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    LossBreakdown epoch_sum;
    std::vector<double> grads(params.size(), 0.0);

    for (size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::fill(grads.begin(), grads.end(), 0.0);
      for (size_t i = begin; i < end; ++i) {
        Tape t(params);
        const LossNodes nodes = loss_on_tape(t, m, train[order[i]], cfg);
        const double total = t.val(nodes.total).at(0, 0);
        if (!std::isfinite(total))
          throw nnet::NumericsError("pretrain: non-finite loss at epoch " +
                                    std::to_string(epoch));
        epoch_sum.rec += t.val(nodes.rec).at(0, 0);
        epoch_sum.target += t.val(nodes.target).at(0, 0);
        epoch_sum.path_l1 += t.val(nodes.path_l1).at(0, 0);
        epoch_sum.traj_l1 += t.val(nodes.traj_l1).at(0, 0);
        epoch_sum.total += total;
        t.backward(nodes.total);
        t.accumulate_param_grads(grads);
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (double& g : grads) g *= inv;
      nnet::apply_step(result.opt, params, grads);
    }

    EpochLog entry;
    entry.epoch = epoch;
    const double inv_n = 1.0 / static_cast<double>(train.size());
    entry.train.rec = epoch_sum.rec * inv_n;
    entry.train.target = epoch_sum.target * inv_n;
    entry.train.path_l1 = epoch_sum.path_l1 * inv_n;
    entry.train.traj_l1 = epoch_sum.traj_l1 * inv_n;
    entry.train.total = epoch_sum.total * inv_n;
    if (!val.empty()) {
      const auto report = metrics::evaluate(m, params, val, {}, false);
      entry.val_ade = report.ade_avg;
      entry.val_cr = report.collision_rate;
    }
    result.log.push_back(entry);
  }

  result.params = std::move(params);
  return result;
}

void write_training_log(const std::filesystem::path& path,
                        std::span<const EpochLog> log) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("write_training_log: cannot open " +
                             path.string());
  out.precision(17);
  out << "epoch,rec,target,path_l1,traj_l1,total,val_ade,val_cr\n";
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train.rec << ',' << e.train.target << ','
        << e.train.path_l1 << ',' << e.train.traj_l1 << ',' << e.train.total
        << ',' << e.val_ade << ',' << e.val_cr << '\n';
  }
}

}  // namespace latentplan::imitation
