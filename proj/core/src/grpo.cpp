#include "latentplan/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "latentplan/metrics.hpp"

namespace latentplan::grpo {

using geom::Point2;
using nnet::Mat;
using nnet::Tape;
using world::Scenario;

void validate(const RftConfig& cfg) {
  if (cfg.group_size < 2)
    throw std::invalid_argument("rft: group_size must be at least 2");
  if (!(cfg.epsilon > 0.0) || !(cfg.epsilon < 1.0))
    throw std::invalid_argument("rft: epsilon must lie in (0, 1)");
  if (cfg.beta < 0.0 || cfg.lambda < 0.0 || cfg.c_ref < 0.0 ||
      cfg.c_ent < 0.0)
    throw std::invalid_argument("rft: negative loss coefficient");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("rft: learning rate must be positive");
  if (cfg.epochs < 0 || cfg.batch_size <= 0)
    throw std::invalid_argument("rft: bad training budget");
  if (!(cfg.ego_half_extents.x > 0.0) || !(cfg.ego_half_extents.y > 0.0))
    throw std::invalid_argument("rft: non-positive ego extents");
}

GaussianPolicyOutput policy_output(const model::Model& m, const Scenario& s,
                                   std::span<const double> params) {
  GaussianPolicyOutput out;
  out.mu = m.plan(s, params).increments;
  out.sigma = m.sigma(s, params);
  return out;
}

std::vector<double> collision_rewards(const geom::Trajectory& traj,
                                      const Scenario& s,
                                      Point2 ego_half_extents,
                                      bool frozen_agents) {
  const auto boxes = metrics::ego_boxes(traj, s, ego_half_extents);
  std::vector<double> rewards(boxes.size(), 0.0);
  for (size_t j = 0; j < boxes.size(); ++j) {
    const size_t step = frozen_agents ? 0 : j + 1;
    for (const auto& agent : s.agents) {
      if (geom::obb_overlap(boxes[j], agent.box_at(step))) {
        rewards[j] = -1.0;
        break;
      }
    }
  }
  return rewards;
}

namespace {

void check_policy(const GaussianPolicyOutput& pol) {
  const int steps = static_cast<int>(pol.mu.deltas.size());
  if (pol.sigma.rows != steps || pol.sigma.cols != 2)
    throw nnet::ShapeError("grpo: sigma shape does not match the mean");
}

Mat points_matrix(std::span<const Point2> pts) {
  Mat m(static_cast<int>(pts.size()), 2);
  for (size_t i = 0; i < pts.size(); ++i) {
    m.at(static_cast<int>(i), 0) = pts[i].x;
    m.at(static_cast<int>(i), 1) = pts[i].y;
  }
  return m;
}

Mat column_matrix(std::span<const double> v) {
  Mat m(static_cast<int>(v.size()), 1);
  for (size_t i = 0; i < v.size(); ++i) m.at(static_cast<int>(i), 0) = v[i];
  return m;
}

Mat matrix_row_column(const Mat& m, int row) {
  Mat out(m.cols, 1);
  for (int j = 0; j < m.cols; ++j) out.at(j, 0) = m.at(row, j);
  return out;
}

}  // namespace

std::vector<geom::IncrementSeq> sample_group(const GaussianPolicyOutput& pol,
                                             int group_size, Rng& rng) {
  if (group_size < 2)
    throw std::invalid_argument("sample_group: need at least two members");
  check_policy(pol);
  std::vector<geom::IncrementSeq> out(group_size);
  for (auto& inc : out) {
    inc.dt = pol.mu.dt;
    inc.deltas.resize(pol.mu.deltas.size());
    for (size_t j = 0; j < inc.deltas.size(); ++j) {
      const int r = static_cast<int>(j);
      inc.deltas[j].x = rng.normal(pol.mu.deltas[j].x, pol.sigma.at(r, 0));
      inc.deltas[j].y = rng.normal(pol.mu.deltas[j].y, pol.sigma.at(r, 1));
    }
  }
  return out;
}

nnet::Mat normalize_rewards(const nnet::Mat& raw) {
  if (raw.rows < 2)
    throw nnet::ShapeError("normalize_rewards: need at least two rows");
  const double inv_g = 1.0 / static_cast<double>(raw.rows);
  Mat out(raw.rows, raw.cols);
  for (int j = 0; j < raw.cols; ++j) {
    double mean = 0.0;
    for (int i = 0; i < raw.rows; ++i) mean += raw.at(i, j);
    mean *= inv_g;
    double var = 0.0;
    for (int i = 0; i < raw.rows; ++i) {
      const double d = raw.at(i, j) - mean;
      var += d * d;
    }
    var *= inv_g;
    const double denom = std::sqrt(var) + 1e-8;
    for (int i = 0; i < raw.rows; ++i)
      out.at(i, j) = (raw.at(i, j) - mean) / denom;
  }
  return out;
}

nnet::Mat advantages(const nnet::Mat& normalized) {
  Mat out(normalized.rows, normalized.cols);
  for (int i = 0; i < normalized.rows; ++i) {
    for (int j = 0; j < normalized.cols; ++j) {
      double acc = 0.0;
      for (int t = j; t < normalized.cols; ++t) acc += normalized.at(i, t);
      out.at(i, j) = acc;
    }
  }
  return out;
}

std::vector<double> log_prob(const geom::IncrementSeq& traj,
                             const GaussianPolicyOutput& pol) {
  check_policy(pol);
  if (traj.deltas.size() != pol.mu.deltas.size())
    throw nnet::ShapeError("log_prob: trajectory length mismatch");
  const double log2pi = std::log(2.0 * geom::kPi);
  std::vector<double> out(traj.deltas.size());
  for (size_t j = 0; j < out.size(); ++j) {
    const int r = static_cast<int>(j);
    double row = 0.0;
    for (int axis = 0; axis < 2; ++axis) {
      const double mu = axis == 0 ? pol.mu.deltas[j].x : pol.mu.deltas[j].y;
      const double x = axis == 0 ? traj.deltas[j].x : traj.deltas[j].y;
      const double sigma = pol.sigma.at(r, axis);
      const double z = (x - mu) / sigma;
      row += (std::log(sigma) * 2.0 + z * z) + log2pi;
    }
    out[j] = row * -0.5;
  }
  return out;
}

double surrogate(const nnet::Mat& logp_new, const nnet::Mat& logp_old,
                 const nnet::Mat& adv, double epsilon) {
  if (logp_new.rows != logp_old.rows || logp_new.cols != logp_old.cols ||
      logp_new.rows != adv.rows || logp_new.cols != adv.cols)
    throw nnet::ShapeError("surrogate: shape mismatch");
  if (logp_new.rows == 0)
    throw nnet::ShapeError("surrogate: empty group");
  double acc = 0.0;
  for (int i = 0; i < logp_new.rows; ++i) {
    double row = 0.0;
    for (int j = 0; j < logp_new.cols; ++j) {
      const double ratio = std::exp(logp_new.at(i, j) - logp_old.at(i, j));
      const double f1 = ratio * adv.at(i, j);
      const double f2 =
          std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon) * adv.at(i, j);
      row += std::min(f1, f2);
    }
    acc += row;
  }
  return acc * (1.0 / static_cast<double>(logp_new.rows));
}

double gaussian_kl(const geom::IncrementSeq& mu_ref,
                   const GaussianPolicyOutput& pol) {
  check_policy(pol);
  if (mu_ref.deltas.size() != pol.mu.deltas.size())
    throw nnet::ShapeError("gaussian_kl: length mismatch");
  const double log2pi = std::log(2.0 * geom::kPi);
  double acc = 0.0;
  for (size_t j = 0; j < mu_ref.deltas.size(); ++j) {
    const int r = static_cast<int>(j);
    for (int axis = 0; axis < 2; ++axis) {
      const double ref = axis == 0 ? mu_ref.deltas[j].x : mu_ref.deltas[j].y;
      const double mu = axis == 0 ? pol.mu.deltas[j].x : pol.mu.deltas[j].y;
      const double sigma = pol.sigma.at(r, axis);
      const double z = (ref - mu) / sigma;
      acc += std::log(sigma) * 2.0 + z * z;
    }
  }
  return acc * 0.5 + static_cast<double>(mu_ref.deltas.size()) * log2pi;
}

double entropy(const GaussianPolicyOutput& pol) {
  check_policy(pol);
  const double log2pi = std::log(2.0 * geom::kPi);
  double acc = 0.0;
  for (int r = 0; r < pol.sigma.rows; ++r)
    for (int c = 0; c < pol.sigma.cols; ++c) acc += std::log(pol.sigma.at(r, c));
  return acc + static_cast<double>(pol.sigma.rows) * (1.0 + log2pi);
}

double reference_loss(std::span<const geom::IncrementSeq> mu_theta,
                      std::span<const geom::IncrementSeq> mu_ref) {
  if (mu_theta.size() != mu_ref.size() || mu_theta.empty())
    throw nnet::ShapeError("reference_loss: batch size mismatch");
  double acc = 0.0;
  size_t points = 0;
  for (size_t b = 0; b < mu_theta.size(); ++b) {
    if (mu_theta[b].deltas.size() != mu_ref[b].deltas.size())
      throw nnet::ShapeError("reference_loss: length mismatch");
    for (size_t t = 0; t < mu_theta[b].deltas.size(); ++t) {
      const double dx = mu_theta[b].deltas[t].x - mu_ref[b].deltas[t].x;
      const double dy = mu_theta[b].deltas[t].y - mu_ref[b].deltas[t].y;
      acc += std::sqrt(dx * dx + dy * dy);
      ++points;
    }
  }
  if (points == 0) throw nnet::ShapeError("reference_loss: empty sequences");
  return acc / static_cast<double>(points);
}

RolloutGroup make_group(const GaussianPolicyOutput& pol, const Scenario& s,
                        const RftConfig& cfg, Rng& rng) {
  validate(cfg);
  check_policy(pol);
  RolloutGroup group;
  group.samples = sample_group(pol, cfg.group_size, rng);
  const int steps = static_cast<int>(pol.mu.deltas.size());
  group.rewards = Mat(cfg.group_size, steps);
  group.logp_old = Mat(cfg.group_size, steps);
  for (int i = 0; i < cfg.group_size; ++i) {
    const auto traj = geom::integrate_increments(group.samples[i]);
    const auto rewards = collision_rewards(traj, s, cfg.ego_half_extents,
                                           cfg.frozen_agent_rewards);
    const auto logp = log_prob(group.samples[i], pol);
    for (int j = 0; j < steps; ++j) {
      group.rewards.at(i, j) = rewards[j];
      group.logp_old.at(i, j) = logp[j];
    }
  }
  group.normalized = normalize_rewards(group.rewards);
  group.advantages = advantages(group.normalized);
  return group;
}

RftLossNodes loss_on_tape(Tape& t, const model::Model& m, const Scenario& s,
                          const RolloutGroup& group,
                          const geom::IncrementSeq& mu_ref,
                          const RftConfig& cfg) {
  const int steps = m.config().plan.traj_steps;
  const int g = static_cast<int>(group.samples.size());
  if (g < 2) throw nnet::ShapeError("loss_on_tape: need at least two samples");
  if (group.advantages.rows != g || group.advantages.cols != steps ||
      group.logp_old.rows != g || group.logp_old.cols != steps ||
      static_cast<int>(mu_ref.deltas.size()) != steps)
    throw nnet::ShapeError("loss_on_tape: group shape mismatch");

  const auto rollout = m.plan_on_tape(t, s);
  const Tape::Id mu = rollout.plan.increments;
  const Tape::Id sigma = m.sigma_on_tape(t, rollout.plan);
  const double log2pi = std::log(2.0 * geom::kPi);
  const Tape::Id log_sigma2 = t.scale(t.log_(sigma), 2.0);

  RftLossNodes nodes;
  Tape::Id surr_acc = 0;
  for (int i = 0; i < g; ++i) {
    const Tape::Id x = t.constant(points_matrix(group.samples[i].deltas));
    const Tape::Id z = t.div(t.sub(x, mu), sigma);
    const Tape::Id term =
        t.add_scalar(t.add(log_sigma2, t.square(z)), log2pi);
    const Tape::Id logp = t.scale(t.row_sums(term), -0.5);
    const Tape::Id old =
        t.constant(matrix_row_column(group.logp_old, i));
    const Tape::Id ratio = t.exp_(t.sub(logp, old));
    const Tape::Id adv =
        t.constant(matrix_row_column(group.advantages, i));
    const Tape::Id f1 = t.mul(ratio, adv);
    const Tape::Id f2 =
        t.mul(t.clamp_(ratio, 1.0 - cfg.epsilon, 1.0 + cfg.epsilon), adv);
    const Tape::Id contrib = t.sum(t.min_(f1, f2));
    surr_acc = i == 0 ? contrib : t.add(surr_acc, contrib);
    nodes.ratios.push_back(ratio);
  }
  nodes.surrogate = t.scale(surr_acc, 1.0 / static_cast<double>(g));

  const Tape::Id ref_c = t.constant(points_matrix(mu_ref.deltas));
  const Tape::Id quad = t.square(t.div(t.sub(ref_c, mu), sigma));
  nodes.kl = t.add_scalar(t.scale(t.sum(t.add(log_sigma2, quad)), 0.5),
                          static_cast<double>(steps) * log2pi);

  const Tape::Id dist = t.sqrt_(
      t.add_scalar(t.row_sums(t.square(t.sub(mu, ref_c))), 1e-12));
  nodes.ref = t.mean(dist);

  nodes.entropy = t.add_scalar(
      t.sum(t.log_(sigma)), static_cast<double>(steps) * (1.0 + log2pi));

  nodes.total =
      t.add(t.add(t.add(t.scale(nodes.surrogate, -1.0),
                        t.scale(nodes.kl, cfg.beta + cfg.lambda)),
                  t.scale(nodes.ref, cfg.c_ref)),
            t.scale(nodes.entropy, -cfg.c_ent));
  return nodes;
}

StepDiagnostics rft_step(const model::Model& m,
                         std::span<const Scenario> batch,
                         std::vector<double>& params,
                         nnet::OptimizerState& opt,
                         std::span<const double> ref_params,
                         std::span<const double> old_params,
                         const RftConfig& cfg, Rng& rng) {
  validate(cfg);
  if (batch.empty()) throw std::invalid_argument("rft_step: empty batch");
  if (params.size() != m.param_count() ||
      ref_params.size() != m.param_count() ||
      old_params.size() != m.param_count())
    throw nnet::ShapeError("rft_step: parameter size mismatch");

  struct Prepared {
    RolloutGroup group;
    geom::IncrementSeq mu_ref;
  };
  std::vector<Prepared> prep;
  prep.reserve(batch.size());
  for (const auto& s : batch) {
    const auto pol = policy_output(m, s, old_params);
    prep.push_back({make_group(pol, s, cfg, rng),
                    m.plan(s, ref_params).increments});
  }

  StepDiagnostics diag;
  std::vector<double> grads(params.size(), 0.0);
  size_t reward_points = 0, collisions = 0;
  size_t ratio_points = 0, clipped = 0;
  for (size_t k = 0; k < batch.size(); ++k) {
    Tape t(params);
    const RftLossNodes nodes =
        loss_on_tape(t, m, batch[k], prep[k].group, prep[k].mu_ref, cfg);
    const double total = t.val(nodes.total).at(0, 0);
    if (!std::isfinite(total))
      throw nnet::NumericsError("rft: non-finite loss (value " +
                                std::to_string(total) + ")");
    diag.surrogate += t.val(nodes.surrogate).at(0, 0);
    diag.kl += t.val(nodes.kl).at(0, 0);
    diag.ref_loss += t.val(nodes.ref).at(0, 0);
    diag.entropy += t.val(nodes.entropy).at(0, 0);
    for (const Tape::Id id : nodes.ratios) {
      const Mat& ratio = t.val(id);
      for (double r : ratio.data) {
        ++ratio_points;
        if (r < 1.0 - cfg.epsilon || r > 1.0 + cfg.epsilon) ++clipped;
      }
    }
    for (double r : prep[k].group.rewards.data) {
      ++reward_points;
      diag.mean_reward += r;
      if (r < 0.0) ++collisions;
    }
    t.backward(nodes.total);
    t.accumulate_param_grads(grads);
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (double& gval : grads) gval *= inv_b;
  nnet::apply_step(opt, params, grads);

  diag.surrogate *= inv_b;
  diag.kl *= inv_b;
  diag.ref_loss *= inv_b;
  diag.entropy *= inv_b;
  diag.mean_reward /= static_cast<double>(reward_points);
  diag.collision_frac =
      static_cast<double>(collisions) / static_cast<double>(reward_points);
  diag.clip_frac =
      static_cast<double>(clipped) / static_cast<double>(ratio_points);
  return diag;
}

RftResult rft(const model::Model& m, std::span<const Scenario> corpus,
              std::vector<double> params, const RftConfig& cfg) {
  validate(cfg);
  if (corpus.empty()) throw std::invalid_argument("rft: empty corpus");
  if (params.size() != m.param_count())
    throw nnet::ShapeError("rft: parameter size mismatch");

  const std::vector<double> ref = params;
  RftResult result;
  result.opt = cfg.optimizer == nnet::OptimizerKind::kAdam
                   ? nnet::OptimizerState::adam(cfg.learning_rate, params.size())
                   : nnet::OptimizerState::sgd(cfg.learning_rate);
  Rng shuffle_rng(cfg.seed, "rft.shuffle");
  Rng sample_rng(cfg.seed, "rft.sample");

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t{0});

  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::vector<Scenario> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) batch.push_back(corpus[order[i]]);
      const std::vector<double> old = params;
      StepDiagnostics diag =
          rft_step(m, batch, params, result.opt, ref, old, cfg, sample_rng);
      diag.step = step++;
      result.log.push_back(diag);
    }
  }
  result.params = std::move(params);
  return result;
}

void write_rft_log(const std::filesystem::path& path,
                   std::span<const StepDiagnostics> log) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("write_rft_log: cannot open " + path.string());
  out.precision(17);
  out << "step,mean_reward,collision_frac,clip_frac,kl,entropy,ref_loss,"
         "surrogate\n";
  for (const auto& d : log) {
    out << d.step << ',' << d.mean_reward << ',' << d.collision_frac << ','
        << d.clip_frac << ',' << d.kl << ',' << d.entropy << ',' << d.ref_loss
        << ',' << d.surrogate << '\n';
  }
}

SftResult sft(const model::Model& m, std::span<const Scenario> corpus,
              std::vector<double> params, const SftConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("sft: empty corpus");
  if (params.size() != m.param_count())
    throw nnet::ShapeError("sft: parameter size mismatch");
  if (cfg.collision_weight < 0.0 || !(cfg.learning_rate > 0.0) ||
      cfg.epochs < 0 || cfg.batch_size <= 0)
    throw std::invalid_argument("sft: bad configuration");

  SftResult result;
  result.opt = cfg.optimizer == nnet::OptimizerKind::kAdam
                   ? nnet::OptimizerState::adam(cfg.learning_rate, params.size())
                   : nnet::OptimizerState::sgd(cfg.learning_rate);
  Rng shuffle_rng(cfg.seed, "sft.shuffle");

  std::vector<size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::vector<double> grads(params.size(), 0.0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::fill(grads.begin(), grads.end(), 0.0);
      double batch_loss = 0.0;
      for (size_t i = begin; i < end; ++i) {
        const Scenario& s = corpus[order[i]];
        Tape t(params);
        const auto rollout = m.plan_on_tape(t, s);

        // Collision weights follow the plan the current parameters
        // produce, read straight off the graph.
        const Mat& pts = t.val(rollout.plan.traj_points);
        geom::Trajectory traj;
        traj.dt = s.expert.dt;
        traj.points.resize(pts.rows);
        for (int r = 0; r < pts.rows; ++r)
          traj.points[r] = {pts.at(r, 0), pts.at(r, 1)};
        const auto rewards =
            collision_rewards(traj, s, cfg.ego_half_extents, false);
        Mat weights(pts.rows, 2);
        for (int r = 0; r < pts.rows; ++r) {
          const double w =
              rewards[r] < 0.0 ? 1.0 + cfg.collision_weight : 1.0;
          weights.at(r, 0) = w;
          weights.at(r, 1) = w;
        }

        const Mat expert_inc =
            points_matrix(geom::differentiate(s.expert).deltas);
        const Tape::Id loss = t.mean(
            t.mul(t.constant(weights),
                  t.abs_(t.sub(rollout.plan.increments,
                               t.constant(expert_inc)))));
        const double value = t.val(loss).at(0, 0);
        if (!std::isfinite(value))
          throw nnet::NumericsError("sft: non-finite loss at epoch " +
                                    std::to_string(epoch));
        batch_loss += value;
        t.backward(loss);
        t.accumulate_param_grads(grads);
      }
      const double inv = 1.0 / static_cast<double>(end - begin);
      for (double& gval : grads) gval *= inv;
      nnet::apply_step(result.opt, params, grads);
      result.losses.push_back(batch_loss * inv);
    }
  }
  result.params = std::move(params);
  return result;
}

}  // namespace latentplan::grpo
