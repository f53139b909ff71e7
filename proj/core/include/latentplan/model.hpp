#pragma once

#include <span>
#include <vector>

#include "latentplan/nnet.hpp"
#include "latentplan/planner.hpp"
#include "latentplan/world.hpp"

namespace latentplan::model {

// Standard deviations from the variance head never fall below this.
inline constexpr double kSigmaFloor = 1e-4;

struct ModelConfig {
  geom::GridSpec grid{{-16.0, -32.0}, 2.0, 16, 32};
  world::WorldModelConfig world;
  planner::PlannerConfig plan;
};

// The full trainable stack: per-cell world model, hierarchical planner,
// and the variance head that Gaussianizes the trajectory for
// fine-tuning. All parameters live in one flat vector with the layout
// world | planner | variance.
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const world::WorldModel& world_model() const { return world_; }
  const planner::Planner& plan_head() const { return planner_; }
  const nnet::DenseNet& variance_net() const { return variance_net_; }
  const nnet::ParamLayout& layout() const { return layout_; }
  size_t param_count() const { return layout_.total(); }

  // Every block draws from its own named stream off `seed`; repeated
  // calls with the same seed produce identical vectors.
  std::vector<double> init_params(uint64_t seed) const;

  struct Rollout {
    nnet::Tape::Id latent;  // cells x channels
    planner::Planner::TapePlan plan;
  };
  Rollout plan_on_tape(nnet::Tape& t, const world::Scenario& s,
                       int iters = -1) const;
  // Per-point standard deviations (traj_steps x 2) for the current
  // plan. The fused features are detached first, so only the variance
  // block receives gradient through this node.
  nnet::Tape::Id sigma_on_tape(nnet::Tape& t,
                               const planner::Planner::TapePlan& plan) const;

  world::LatentGrid encode(const world::Scenario& s,
                           std::span<const double> params) const;
  planner::PlanOutput plan(const world::Scenario& s,
                           std::span<const double> params,
                           int iters = -1) const;
  nnet::Mat sigma(const world::Scenario& s,
                  std::span<const double> params) const;

  std::span<const double> world_block(std::span<const double> params) const;
  std::span<const double> planner_block(std::span<const double> params) const;

 private:
  void check_params(std::span<const double> params) const;

  ModelConfig cfg_;
  world::WorldModel world_;
  planner::Planner planner_;
  nnet::DenseNet variance_net_;
  nnet::ParamLayout layout_;
};

}  // namespace latentplan::model
