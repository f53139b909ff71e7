#pragma once

#include <span>
#include <string>
#include <vector>

#include "latentplan/geom.hpp"
#include "latentplan/nnet.hpp"
#include "latentplan/world.hpp"

namespace latentplan::planner {

struct PlannerConfig {
  int query_dim = 64;       // width of the learned queries
  int key_dim = 32;         // attention projection width
  int path_points = 30;     // spatial path length N
  int traj_steps = 6;       // trajectory horizon T
  int refine_iters = 3;     // refinement sweeps K
  double refine_alpha = 0.1;
  double path_spacing = 2.0;  // meters between ground-truth path points
  int state_dim = 32;       // plan-state encoding width
  int b_dim = 8;            // scale-feature encoding width
  int head_hidden = 32;
  int fusion_hidden = 32;
  double coord_scale = 0.1;
  double b_floor = 1e-3;
  double sigma_init = 0.3;  // initial per-step sampling std in meters
};

// Probabilistic goal region: an axis-wise Laplace distribution with
// location mu and scale b (always >= the configured floor).
struct TargetRegion {
  geom::Point2 mu;
  geom::Point2 b{1.0, 1.0};
};

struct SpatialPath {
  std::vector<geom::Point2> points;
};

struct PlanIterate {
  TargetRegion target;
  geom::Point2 target_raw_b;  // pre-softplus state the refinement carries
  SpatialPath path;
  geom::IncrementSeq increments;
};

struct PlanOutput {
  TargetRegion target;
  geom::Point2 target_raw_b;
  SpatialPath path;
  geom::IncrementSeq increments;
  geom::Trajectory trajectory;     // prefix sums of the increments
  std::vector<PlanIterate> history;  // K+1 entries; [0] is pre-refinement,
                                     // back() equals the returned plan
};

// Number of positional encoding channels appended to each cell.
inline constexpr int kPosEncDims = 6;

// Hierarchical planning head over a latent grid. Three learned queries
// (target, path, trajectory) attend over the grid cells, decode an
// initial plan, then run K residual refinement sweeps that re-sample
// the latent at learned offsets around the current plan geometry.
//
// Parameters occupy one contiguous block; named groups make individual
// heads addressable for tests and diagnostics.
class Planner {
 public:
  Planner(const PlannerConfig& cfg, const geom::GridSpec& grid,
          int latent_channels);

  const PlannerConfig& config() const { return cfg_; }
  size_t param_count() const { return total_params_; }

  struct Group {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
  };
  std::span<const Group> groups() const { return groups_; }
  const Group& group(std::string_view name) const;

  // Draws every group from its own named stream off `master_seed`;
  // offset and delta heads end in an exactly zero final layer so a
  // fresh planner refines as the identity.
  void init_params(std::span<double> dst, uint64_t master_seed) const;

  // -- graph construction -- //

  struct TapePlan {
    nnet::Tape::Id queries;        // 3 x D fused queries
    nnet::Tape::Id attn_grid;      // 3 x cells, stage one weights
    nnet::Tape::Id attn_self;      // 3 x 3, stage two weights
    nnet::Tape::Id mu;             // 1 x 2
    nnet::Tape::Id raw_b;          // 1 x 2
    nnet::Tape::Id b;              // 1 x 2, softplus(raw) + floor
    nnet::Tape::Id path;           // N x 2
    nnet::Tape::Id increments;     // T x 2
    nnet::Tape::Id traj_points;    // T x 2 prefix sums
    nnet::Tape::Id state_feature;  // 1 x state_dim for the final plan
    struct Iterate {
      nnet::Tape::Id mu, raw_b, b, path, increments;
    };
    std::vector<Iterate> history;
  };

  // Builds the full plan graph. `latent` is a (cells x channels) node;
  // `offset` locates the planner block in the tape's parameter vector.
  // `iters` overrides config().refine_iters when >= 0.
  TapePlan plan_on_tape(nnet::Tape& t, nnet::Tape::Id latent, world::Command cmd,
                        size_t offset, int iters = -1) const;

  // -- value-level surface -- //

  // Latent channels plus positional encodings, one row per cell.
  nnet::Mat cell_features(const world::LatentGrid& w) const;

  struct QueryInteraction {
    nnet::Mat queries;    // 3 x D
    nnet::Mat attn_grid;  // 3 x cells
    nnet::Mat attn_self;  // 3 x 3
  };
  QueryInteraction query_interact(const world::LatentGrid& w, world::Command cmd,
                                  std::span<const double> params) const;
  // Same computation over an explicit feature matrix; used to probe
  // permutation invariance and degenerate-feature behavior directly.
  QueryInteraction query_interact_features(const nnet::Mat& features,
                                           world::Command cmd,
                                           std::span<const double> params) const;

  TargetRegion decode_target(const nnet::Mat& queries,
                             std::span<const double> params) const;
  SpatialPath decode_path(const nnet::Mat& queries,
                          std::span<const double> params) const;
  geom::IncrementSeq decode_traj(const nnet::Mat& queries,
                                 std::span<const double> params) const;

  // Full plan from a latent grid. `params` spans exactly this
  // planner's block.
  PlanOutput plan(const world::LatentGrid& w, world::Command cmd,
                  std::span<const double> params, int iters = -1) const;

  // Runs refinement sweeps from an explicit starting plan. Throws
  // std::invalid_argument for negative `iters`.
  PlanOutput refine(const PlanOutput& start, const nnet::Mat& queries,
                    const world::LatentGrid& w, std::span<const double> params,
                    int iters, double alpha) const;

 private:
  struct RefineState {
    nnet::Tape::Id mu, raw_b, b, path, inc;
  };
  struct FusedQueries {
    nnet::Tape::Id q_final, attn_grid, attn_self;
  };
  nnet::Mat posenc_matrix() const;
  nnet::Mat latent_matrix(const world::LatentGrid& w) const;
  FusedQueries fuse_queries(nnet::Tape& t, nnet::Tape::Id features,
                            world::Command cmd, size_t offset) const;
  nnet::Tape::Id grid_coords(nnet::Tape& t, nnet::Tape::Id pts) const;
  RefineState refine_sweeps(nnet::Tape& t, nnet::Tape::Id latent,
                            nnet::Tape::Id q_target, nnet::Tape::Id q_path,
                            nnet::Tape::Id q_traj, RefineState state,
                            size_t offset, int iters, double alpha,
                            std::vector<TapePlan::Iterate>* history) const;
  nnet::Tape::Id state_encoding(nnet::Tape& t, const RefineState& s,
                                size_t offset) const;
  PlanOutput extract_plan(const nnet::Tape& t, const TapePlan& tp) const;

  PlannerConfig cfg_;
  geom::GridSpec grid_;
  int channels_ = 0;

  nnet::DenseNet stage1_query_, stage1_key_, stage1_value_;
  nnet::DenseNet stage2_query_, stage2_key_, stage2_value_;
  nnet::DenseNet head_target_, head_path_, head_traj_;
  nnet::DenseNet state_net_, b_net_;
  nnet::DenseNet offset_target_, offset_path_, offset_traj_;
  nnet::DenseNet delta_target_, delta_path_, delta_traj_;

  std::vector<Group> groups_;
  std::vector<const nnet::DenseNet*> group_nets_;  // null for raw blocks
  std::vector<bool> zero_last_;
  size_t total_params_ = 0;
};

}  // namespace latentplan::planner
