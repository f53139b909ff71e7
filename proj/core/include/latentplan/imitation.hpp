#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "latentplan/model.hpp"

namespace latentplan::imitation {

struct PretrainConfig {
  double beta = 0.2;     // reconstruction weight
  double gamma = 0.001;  // target-region weight
  double eta = 1.0;      // shared weight for path and trajectory L1
  double semantic = 0.0;  // reserved slot; no semantic labels exist here
  double aux_weight = 0.3;  // extra supervision on the unrefined plan
  bool shared_scale = false;  // one Laplace scale for both axes (b_x)
  bool condition_on_expert = false;  // world decoder sees the expert
                                     // trajectory instead of the plan
  int epochs = 12;
  double learning_rate = 5e-5;
  int batch_size = 8;
  double val_fraction = 0.2;
  uint64_t seed = 0;
  nnet::OptimizerKind optimizer = nnet::OptimizerKind::kAdam;
};

struct LossBreakdown {
  double rec = 0.0;
  double target = 0.0;
  double path_l1 = 0.0;
  double traj_l1 = 0.0;
  double total = 0.0;
};

// Per-axis Laplace negative log likelihood of y under the region:
// sum_i [ log(2 b_i) + |y_i - mu_i| / b_i ]. With `shared_scale` the x
// axis scale serves both axes. Non-positive scales are rejected.
double laplace_nll(geom::Point2 y, const planner::TargetRegion& region,
                   bool shared_scale = false);

// Mean absolute error over all coordinates of two point lists.
double traj_l1(std::span<const geom::Point2> pred,
               std::span<const geom::Point2> gt);

// Supervision targets derived from the expert trajectory.
geom::Point2 gt_target(const world::Scenario& s);
std::vector<geom::Point2> gt_path(const world::Scenario& s, int count,
                                  double spacing);

struct LossNodes {
  nnet::Tape::Id rec, target, path_l1, traj_l1, total;
};

// Builds the full pretraining objective for one scenario: latent
// reconstruction against the advanced scene (target detached), Laplace
// NLL on the goal region, and L1 on path and trajectory, each with an
// aux_weight-scaled copy on the unrefined plan.
LossNodes loss_on_tape(nnet::Tape& t, const model::Model& m,
                       const world::Scenario& s, const PretrainConfig& cfg);

// Value-level loss for an already produced plan.
LossBreakdown compute_losses(const model::Model& m, const world::Scenario& s,
                             const planner::PlanOutput& plan,
                             std::span<const double> params,
                             const PretrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  LossBreakdown train;  // mean over the epoch's training scenarios
  double val_ade = 0.0;
  double val_cr = 0.0;  // percent
};

struct PretrainResult {
  std::vector<double> params;
  nnet::OptimizerState opt;
  std::vector<EpochLog> log;
};

// Minibatch training over the corpus. The trailing val_fraction of the
// corpus is held out for the per-epoch ADE / collision-rate columns.
// Deterministic in (params, corpus, cfg). Non-finite losses or
// gradients abort with NumericsError.
PretrainResult pretrain(const model::Model& m,
                        std::span<const world::Scenario> corpus,
                        std::vector<double> params,
                        const PretrainConfig& cfg);

// CSV: epoch, rec, target, path_l1, traj_l1, total, val_ade, val_cr.
void write_training_log(const std::filesystem::path& path,
                        std::span<const EpochLog> log);

}  // namespace latentplan::imitation
