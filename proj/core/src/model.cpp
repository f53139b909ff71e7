#include "latentplan/model.hpp"

#include <cmath>
#include <stdexcept>

namespace latentplan::model {

using nnet::Tape;

Model::Model(const ModelConfig& cfg)
    : cfg_(cfg),
      world_(cfg.world, cfg.grid),
      planner_(cfg.plan, cfg.grid, cfg.world.channels),
      variance_net_{{cfg.plan.query_dim + cfg.plan.state_dim,
                     cfg.plan.head_hidden, 2 * cfg.plan.traj_steps},
                    nnet::Activation::kTanh} {
  if (cfg.plan.traj_steps != cfg.world.horizon_steps)
    throw std::invalid_argument(
        "Model: planner horizon and world-model horizon differ");
  layout_.add("world", world_.param_count());
  layout_.add("planner", planner_.param_count());
  layout_.add("variance", variance_net_.param_count());
}

std::vector<double> Model::init_params(uint64_t seed) const {
  std::vector<double> params(layout_.total(), 0.0);
  std::span<double> all(params);

  const auto& w = layout_.find("world");
  Rng enc_rng(seed, "world.encoder");
  world_.encoder().init_params(
      all.subspan(w.offset + world_.encoder_offset(),
                  world_.encoder().param_count()),
      enc_rng);
  Rng dec_rng(seed, "world.decoder");
  world_.decoder().init_params(
      all.subspan(w.offset + world_.decoder_offset(),
                  world_.decoder().param_count()),
      dec_rng);

  const auto& p = layout_.find("planner");
  planner_.init_params(all.subspan(p.offset, p.count), seed);

  const auto& v = layout_.find("variance");
  Rng var_rng(seed, "variance");
  auto vspan = all.subspan(v.offset, v.count);
  variance_net_.init_params(vspan, var_rng);
  // Zero the output layer and bias it so every step starts at sigma_init;
  // input dependence is learned during fine-tuning.
  const double raw = std::log(std::expm1(cfg_.plan.sigma_init - kSigmaFloor));
  const size_t out = static_cast<size_t>(2 * cfg_.plan.traj_steps);
  const size_t last = variance_net_.last_layer_offset();
  for (size_t k = last; k < vspan.size(); ++k) vspan[k] = 0.0;
  for (size_t k = vspan.size() - out; k < vspan.size(); ++k) vspan[k] = raw;
  return params;
}

Model::Rollout Model::plan_on_tape(Tape& t, const world::Scenario& s,
                                   int iters) const {
  const auto& w = layout_.find("world");
  const auto& p = layout_.find("planner");
  Rollout r;
  r.latent = world_.encode_on_tape(t, s, w.offset);
  r.plan = planner_.plan_on_tape(t, r.latent, s.command, p.offset, iters);
  return r;
}

Tape::Id Model::sigma_on_tape(Tape& t,
                              const planner::Planner::TapePlan& plan) const {
  const auto& v = layout_.find("variance");
  const std::array<Tape::Id, 2> parts{t.slice_rows(plan.queries, 2, 1),
                                      plan.state_feature};
  const Tape::Id fused = t.detach(t.concat_cols(parts));
  const Tape::Id raw = variance_net_.apply(t, fused, v.offset);
  return t.reshape(t.add_scalar(t.softplus(raw), kSigmaFloor),
                   cfg_.plan.traj_steps, 2);
}

void Model::check_params(std::span<const double> params) const {
  if (params.size() != layout_.total())
    throw nnet::ShapeError("Model: parameter span size mismatch");
}

std::span<const double> Model::world_block(
    std::span<const double> params) const {
  check_params(params);
  const auto& w = layout_.find("world");
  return params.subspan(w.offset, w.count);
}

std::span<const double> Model::planner_block(
    std::span<const double> params) const {
  check_params(params);
  const auto& p = layout_.find("planner");
  return params.subspan(p.offset, p.count);
}

world::LatentGrid Model::encode(const world::Scenario& s,
                                std::span<const double> params) const {
  return world_.encode(s, world_block(params));
}

planner::PlanOutput Model::plan(const world::Scenario& s,
                                std::span<const double> params,
                                int iters) const {
  return planner_.plan(encode(s, params), s.command, planner_block(params),
                       iters);
}

nnet::Mat Model::sigma(const world::Scenario& s,
                       std::span<const double> params) const {
  check_params(params);
  Tape t(params);
  const Rollout r = plan_on_tape(t, s);
  return t.val(sigma_on_tape(t, r.plan));
}

}  // namespace latentplan::model
