#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "latentplan/model.hpp"

namespace latentplan::grpo {

// Stochastic policy over trajectory increments: the planner's decoded
// increments serve as the per-point means, the variance head supplies
// per-point per-axis standard deviations (floored at model::kSigmaFloor).
struct GaussianPolicyOutput {
  geom::IncrementSeq mu;
  nnet::Mat sigma;  // traj_steps x 2
};

struct RftConfig {
  int group_size = 10;
  double epsilon = 0.2;  // surrogate clip radius
  double beta = 0.1;     // KL weight inside the surrogate objective
  double lambda = 0.1;   // KL weight added again in the total loss
  double c_ref = 0.12;   // reference-distance weight
  double c_ent = 0.1;    // entropy bonus weight
  double learning_rate = 3e-6;
  int epochs = 1;
  int batch_size = 8;
  uint64_t seed = 0;
  // Score rollouts against the agents' step-0 poses instead of their
  // time-matched scripted poses.
  bool frozen_agent_rewards = false;
  geom::Point2 ego_half_extents{2.25, 1.0};
  nnet::OptimizerKind optimizer = nnet::OptimizerKind::kAdam;
};

// Throws std::invalid_argument unless group_size >= 2, epsilon lies in
// (0, 1), every coefficient is >= 0 and the budget knobs are sane.
void validate(const RftConfig& cfg);

// One scenario's sampled rollout set with its derived statistics. All
// matrices are group_size x traj_steps.
struct RolloutGroup {
  std::vector<geom::IncrementSeq> samples;
  nnet::Mat rewards;     // entries in {-1, 0}
  nnet::Mat normalized;  // column-normalized rewards
  nnet::Mat advantages;  // suffix sums of `normalized`
  nnet::Mat logp_old;    // per-point log densities under the sampler
};

// The model's policy at one scenario under the given parameters.
GaussianPolicyOutput policy_output(const model::Model& m,
                                   const world::Scenario& s,
                                   std::span<const double> params);

// Per-point rewards for an ego-frame trajectory: -1 when the ego box at
// point j overlaps any agent box at the matching script step, else 0.
// Box headings follow the direction of motion, falling back to the
// previous heading across near-zero steps.
std::vector<double> collision_rewards(const geom::Trajectory& traj,
                                      const world::Scenario& s,
                                      geom::Point2 ego_half_extents = {2.25,
                                                                       1.0},
                                      bool frozen_agents = false);

// Draws group_size trajectories, each point independently normal around
// the policy mean with the policy's per-axis deviations.
std::vector<geom::IncrementSeq> sample_group(const GaussianPolicyOutput& pol,
                                             int group_size, Rng& rng);

// Column-wise standardization over the group: subtract the column mean,
// divide by the population standard deviation plus 1e-8. Degenerate
// columns (all rollouts scored alike) map to zero. Needs >= 2 rows.
nnet::Mat normalize_rewards(const nnet::Mat& raw);

// Suffix sums along the time axis: out(i, j) = sum of in(i, t) for
// t >= j, accumulated in ascending t order.
nnet::Mat advantages(const nnet::Mat& normalized);

// Per-point diagonal-Gaussian log densities of `traj` under `pol`. The
// arithmetic mirrors the graph construction in loss_on_tape exactly, so
// probability ratios under identical parameters are exactly one.
std::vector<double> log_prob(const geom::IncrementSeq& traj,
                             const GaussianPolicyOutput& pol);

// Clipped importance-weighted objective: mean over the group of the
// per-point sum of min(ratio * adv, clip(ratio, 1 -+ eps) * adv).
double surrogate(const nnet::Mat& logp_new, const nnet::Mat& logp_old,
                 const nnet::Mat& adv, double epsilon);

// Gaussian negative-log-likelihood form of the divergence from the
// reference means, summed over points with diagonal covariance:
// 0.5 * sum[2 log sigma + ((mu_ref - mu)/sigma)^2] + T log(2 pi).
double gaussian_kl(const geom::IncrementSeq& mu_ref,
                   const GaussianPolicyOutput& pol);

// Differential entropy of the policy, summed over points:
// sum over points and axes of 0.5 * (1 + log(2 pi sigma^2)).
double entropy(const GaussianPolicyOutput& pol);

// Mean per-point Euclidean distance between two batches of increment
// sequences: (1 / (B T)) * sum of |mu_theta - mu_ref|_2.
double reference_loss(std::span<const geom::IncrementSeq> mu_theta,
                      std::span<const geom::IncrementSeq> mu_ref);

// Samples a full rollout group under `pol` and fills every derived
// matrix. Rewards come from collision_rewards on the integrated samples.
RolloutGroup make_group(const GaussianPolicyOutput& pol,
                        const world::Scenario& s, const RftConfig& cfg,
                        Rng& rng);

struct RftLossNodes {
  nnet::Tape::Id surrogate;  // maximized; enters total negated
  nnet::Tape::Id kl;
  nnet::Tape::Id ref;
  nnet::Tape::Id entropy;
  nnet::Tape::Id total;  // -surr + (beta + lambda) kl + c_ref ref - c_ent H
  std::vector<nnet::Tape::Id> ratios;  // one traj_steps x 1 node per member
};

// Builds the fine-tuning objective for one scenario. The reference
// distance guards its square root with 1e-12 under the radical so the
// gradient stays finite when the means coincide; value-level
// reference_loss stays exact.
RftLossNodes loss_on_tape(nnet::Tape& t, const model::Model& m,
                          const world::Scenario& s, const RolloutGroup& group,
                          const geom::IncrementSeq& mu_ref,
                          const RftConfig& cfg);

struct StepDiagnostics {
  int step = 0;
  double mean_reward = 0.0;
  double collision_frac = 0.0;  // sampled points in collision
  double clip_frac = 0.0;       // ratios outside the clip band
  double kl = 0.0;
  double entropy = 0.0;
  double ref_loss = 0.0;
  double surrogate = 0.0;
};

// One optimizer step over a scenario batch: rollouts are sampled and
// scored under `old_params`, the loss graph runs under `params`, and
// the update lands in `params` / `opt` in place. Throws
// nnet::NumericsError on a non-finite loss or gradient.
StepDiagnostics rft_step(const model::Model& m,
                         std::span<const world::Scenario> batch,
                         std::vector<double>& params,
                         nnet::OptimizerState& opt,
                         std::span<const double> ref_params,
                         std::span<const double> old_params,
                         const RftConfig& cfg, Rng& rng);

struct RftResult {
  std::vector<double> params;
  nnet::OptimizerState opt;
  std::vector<StepDiagnostics> log;  // one row per optimizer step
};

// Reinforcement fine-tuning over the corpus. The incoming parameters
// double as the frozen reference policy; the sampling policy refreshes
// to the current parameters before every step, with a single gradient
// step per rollout set. Deterministic in (params, corpus, cfg).
RftResult rft(const model::Model& m, std::span<const world::Scenario> corpus,
              std::vector<double> params, const RftConfig& cfg);

// CSV: step, mean_reward, collision_frac, clip_frac, kl, entropy,
// ref_loss, surrogate.
void write_rft_log(const std::filesystem::path& path,
                   std::span<const StepDiagnostics> log);

// Supervised comparator for the fine-tuning stage: per-coordinate L1 to
// the expert increments, with points whose current plan is in collision
// up-weighted by (1 + collision_weight).
struct SftConfig {
  double collision_weight = 1.0;
  double learning_rate = 3e-6;
  int epochs = 1;
  int batch_size = 8;
  uint64_t seed = 0;
  geom::Point2 ego_half_extents{2.25, 1.0};
  nnet::OptimizerKind optimizer = nnet::OptimizerKind::kAdam;
};

struct SftResult {
  std::vector<double> params;
  nnet::OptimizerState opt;
  std::vector<double> losses;  // one mean batch loss per step
};

SftResult sft(const model::Model& m, std::span<const world::Scenario> corpus,
              std::vector<double> params, const SftConfig& cfg);

}  // namespace latentplan::grpo
