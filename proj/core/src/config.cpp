#include "latentplan/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace latentplan::config {

namespace {

using nlohmann::json;

void fail(const std::string& msg) {
  throw std::invalid_argument("config: " + msg);
}

void require(bool ok, const std::string& msg) {
  if (!ok) fail(msg);
}

std::string kind_name(nnet::OptimizerKind k) {
  return k == nnet::OptimizerKind::kAdam ? "adam" : "sgd";
}

nnet::OptimizerKind kind_from(const std::string& name) {
  if (name == "adam") return nnet::OptimizerKind::kAdam;
  if (name == "sgd") return nnet::OptimizerKind::kSgd;
  throw ConfigError("config: unknown optimizer '" + name + "'");
}

// -- encoding -- //

json encode(const geom::Point2& p) { return json::array({p.x, p.y}); }

json encode(const geom::GridSpec& g) {
  return {{"origin", encode(g.origin)},
          {"cell_size", g.cell_size},
          {"width", g.width},
          {"height", g.height}};
}

json encode(const world::WorldModelConfig& w) {
  return {{"channels", w.channels},
          {"encoder_hidden", w.encoder_hidden},
          {"decoder_hidden", w.decoder_hidden},
          {"encoder_radius", w.encoder_radius},
          {"decoder_radius", w.decoder_radius},
          {"horizon_steps", w.horizon_steps},
          {"coord_scale", w.coord_scale}};
}

json encode(const planner::PlannerConfig& p) {
  return {{"query_dim", p.query_dim},
          {"key_dim", p.key_dim},
          {"path_points", p.path_points},
          {"traj_steps", p.traj_steps},
          {"refine_iters", p.refine_iters},
          {"refine_alpha", p.refine_alpha},
          {"path_spacing", p.path_spacing},
          {"state_dim", p.state_dim},
          {"b_dim", p.b_dim},
          {"head_hidden", p.head_hidden},
          {"fusion_hidden", p.fusion_hidden},
          {"coord_scale", p.coord_scale},
          {"b_floor", p.b_floor},
          {"sigma_init", p.sigma_init}};
}

json encode(const model::ModelConfig& m) {
  return {{"grid", encode(m.grid)},
          {"world", encode(m.world)},
          {"planner", encode(m.plan)}};
}

json encode(const world::GeneratorConfig& g) {
  return {{"horizon_steps", g.horizon_steps},
          {"dt", g.dt},
          {"max_attempts", g.max_attempts},
          {"min_speed", g.min_speed},
          {"max_speed", g.max_speed},
          {"min_agents", g.min_agents},
          {"max_agents", g.max_agents},
          {"ego_half_extents", encode(g.ego_half_extents)}};
}

json encode(const imitation::PretrainConfig& p) {
  return {{"beta", p.beta},
          {"gamma", p.gamma},
          {"eta", p.eta},
          {"semantic", p.semantic},
          {"aux_weight", p.aux_weight},
          {"shared_scale", p.shared_scale},
          {"condition_on_expert", p.condition_on_expert},
          {"epochs", p.epochs},
          {"learning_rate", p.learning_rate},
          {"batch_size", p.batch_size},
          {"val_fraction", p.val_fraction},
          {"seed", p.seed},
          {"optimizer", kind_name(p.optimizer)}};
}

json encode(const grpo::RftConfig& r) {
  return {{"group_size", r.group_size},
          {"epsilon", r.epsilon},
          {"beta", r.beta},
          {"lambda", r.lambda},
          {"c_ref", r.c_ref},
          {"c_ent", r.c_ent},
          {"learning_rate", r.learning_rate},
          {"epochs", r.epochs},
          {"batch_size", r.batch_size},
          {"seed", r.seed},
          {"frozen_agent_rewards", r.frozen_agent_rewards},
          {"ego_half_extents", encode(r.ego_half_extents)},
          {"optimizer", kind_name(r.optimizer)}};
}

json encode(const grpo::SftConfig& s) {
  return {{"collision_weight", s.collision_weight},
          {"learning_rate", s.learning_rate},
          {"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"seed", s.seed},
          {"ego_half_extents", encode(s.ego_half_extents)},
          {"optimizer", kind_name(s.optimizer)}};
}

json encode(const metrics::EvalThresholds& e) {
  return {{"accel_limit", e.accel_limit},
          {"jerk_limit", e.jerk_limit},
          {"ttc_window", e.ttc_window},
          {"ttc_samples_per_second", e.ttc_samples_per_second},
          {"ego_half_extents", encode(e.ego_half_extents)}};
}

json encode(const ExperimentConfig& cfg) {
  return {{"seed", cfg.seed},
          {"train_corpus", cfg.train_corpus},
          {"val_corpus", cfg.val_corpus},
          {"model", encode(cfg.model)},
          {"generator", encode(cfg.generator)},
          {"pretrain", encode(cfg.pretrain)},
          {"rft", encode(cfg.rft)},
          {"sft", encode(cfg.sft)},
          {"eval", encode(cfg.eval)}};
}

// -- decoding -- //

// Reads fields out of one JSON object, leaving absent ones at their
// incoming defaults and rejecting keys nothing asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) {
      throw ConfigError("config: " + where_ + " must be an object");
    }
  }

  void get(const char* key, double& out) { read<double>(key, out); }
  void get(const char* key, int& out) { read<int>(key, out); }
  void get(const char* key, bool& out) { read<bool>(key, out); }
  void get(const char* key, uint64_t& out) { read<uint64_t>(key, out); }
  void get(const char* key, std::string& out) { read<std::string>(key, out); }

  void get(const char* key, geom::Point2& out) {
    const json* v = find(key);
    if (!v) return;
    if (!v->is_array() || v->size() != 2) {
      throw ConfigError("config: " + where_ + "." + key +
                        " must be a [x, y] pair");
    }
    out = {v->at(0).get<double>(), v->at(1).get<double>()};
  }

  void get(const char* key, nnet::OptimizerKind& out) {
    std::string name = kind_name(out);
    read<std::string>(key, name);
    out = kind_from(name);
  }

  // Nested object, or nullptr when absent.
  const json* child(const char* key) { return find(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!allowed_.count(item.key())) {
        throw ConfigError("config: unknown key '" + item.key() + "' in " +
                          where_);
      }
    }
  }

 private:
  const json* find(const char* key) {
    allowed_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const char* key, T& out) {
    if (const json* v = find(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config: bad value for " + where_ + "." + key);
      }
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> allowed_;
};

void decode(const json& j, geom::GridSpec& g) {
  Fields f(j, "model.grid");
  f.get("origin", g.origin);
  f.get("cell_size", g.cell_size);
  f.get("width", g.width);
  f.get("height", g.height);
  f.finish();
}

void decode(const json& j, world::WorldModelConfig& w) {
  Fields f(j, "model.world");
  f.get("channels", w.channels);
  f.get("encoder_hidden", w.encoder_hidden);
  f.get("decoder_hidden", w.decoder_hidden);
  f.get("encoder_radius", w.encoder_radius);
  f.get("decoder_radius", w.decoder_radius);
  f.get("horizon_steps", w.horizon_steps);
  f.get("coord_scale", w.coord_scale);
  f.finish();
}

void decode(const json& j, planner::PlannerConfig& p) {
  Fields f(j, "model.planner");
  f.get("query_dim", p.query_dim);
  f.get("key_dim", p.key_dim);
  f.get("path_points", p.path_points);
  f.get("traj_steps", p.traj_steps);
  f.get("refine_iters", p.refine_iters);
  f.get("refine_alpha", p.refine_alpha);
  f.get("path_spacing", p.path_spacing);
  f.get("state_dim", p.state_dim);
  f.get("b_dim", p.b_dim);
  f.get("head_hidden", p.head_hidden);
  f.get("fusion_hidden", p.fusion_hidden);
  f.get("coord_scale", p.coord_scale);
  f.get("b_floor", p.b_floor);
  f.get("sigma_init", p.sigma_init);
  f.finish();
}

void decode(const json& j, model::ModelConfig& m) {
  Fields f(j, "model");
  if (const json* g = f.child("grid")) decode(*g, m.grid);
  if (const json* w = f.child("world")) decode(*w, m.world);
  if (const json* p = f.child("planner")) decode(*p, m.plan);
  f.finish();
}

void decode(const json& j, world::GeneratorConfig& g) {
  Fields f(j, "generator");
  f.get("horizon_steps", g.horizon_steps);
  f.get("dt", g.dt);
  f.get("max_attempts", g.max_attempts);
  f.get("min_speed", g.min_speed);
  f.get("max_speed", g.max_speed);
  f.get("min_agents", g.min_agents);
  f.get("max_agents", g.max_agents);
  f.get("ego_half_extents", g.ego_half_extents);
  f.finish();
}

void decode(const json& j, imitation::PretrainConfig& p) {
  Fields f(j, "pretrain");
  f.get("beta", p.beta);
  f.get("gamma", p.gamma);
  f.get("eta", p.eta);
  f.get("semantic", p.semantic);
  f.get("aux_weight", p.aux_weight);
  f.get("shared_scale", p.shared_scale);
  f.get("condition_on_expert", p.condition_on_expert);
  f.get("epochs", p.epochs);
  f.get("learning_rate", p.learning_rate);
  f.get("batch_size", p.batch_size);
  f.get("val_fraction", p.val_fraction);
  f.get("seed", p.seed);
  f.get("optimizer", p.optimizer);
  f.finish();
}

void decode(const json& j, grpo::RftConfig& r) {
  Fields f(j, "rft");
  f.get("group_size", r.group_size);
  f.get("epsilon", r.epsilon);
  f.get("beta", r.beta);
  f.get("lambda", r.lambda);
  f.get("c_ref", r.c_ref);
  f.get("c_ent", r.c_ent);
  f.get("learning_rate", r.learning_rate);
  f.get("epochs", r.epochs);
  f.get("batch_size", r.batch_size);
  f.get("seed", r.seed);
  f.get("frozen_agent_rewards", r.frozen_agent_rewards);
  f.get("ego_half_extents", r.ego_half_extents);
  f.get("optimizer", r.optimizer);
  f.finish();
}

void decode(const json& j, grpo::SftConfig& s) {
  Fields f(j, "sft");
  f.get("collision_weight", s.collision_weight);
  f.get("learning_rate", s.learning_rate);
  f.get("epochs", s.epochs);
  f.get("batch_size", s.batch_size);
  f.get("seed", s.seed);
  f.get("ego_half_extents", s.ego_half_extents);
  f.get("optimizer", s.optimizer);
  f.finish();
}

void decode(const json& j, metrics::EvalThresholds& e) {
  Fields f(j, "eval");
  f.get("accel_limit", e.accel_limit);
  f.get("jerk_limit", e.jerk_limit);
  f.get("ttc_window", e.ttc_window);
  f.get("ttc_samples_per_second", e.ttc_samples_per_second);
  f.get("ego_half_extents", e.ego_half_extents);
  f.finish();
}

ExperimentConfig decode_experiment(const json& j) {
  ExperimentConfig cfg;
  Fields f(j, "config");
  f.get("seed", cfg.seed);
  f.get("train_corpus", cfg.train_corpus);
  f.get("val_corpus", cfg.val_corpus);
  if (const json* m = f.child("model")) decode(*m, cfg.model);
  if (const json* g = f.child("generator")) decode(*g, cfg.generator);
  if (const json* p = f.child("pretrain")) decode(*p, cfg.pretrain);
  if (const json* r = f.child("rft")) decode(*r, cfg.rft);
  if (const json* s = f.child("sft")) decode(*s, cfg.sft);
  if (const json* e = f.child("eval")) decode(*e, cfg.eval);
  f.finish();
  return cfg;
}

void check_positive_extents(const geom::Point2& e, const std::string& field) {
  require(e.x > 0.0 && e.y > 0.0, field + " must be positive");
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  const auto& grid = cfg.model.grid;
  require(grid.width > 0 && grid.height > 0, "grid dimensions must be positive");
  require(grid.cell_size > 0.0, "grid cell_size must be positive");

  const auto& w = cfg.model.world;
  require(w.channels > 0, "world channels must be positive");
  require(w.encoder_hidden > 0 && w.decoder_hidden > 0,
          "world hidden widths must be positive");
  require(w.encoder_radius >= 0 && w.decoder_radius >= 0,
          "world radii must be nonnegative");
  require(w.horizon_steps >= 2, "world horizon_steps must be at least 2");
  require(w.coord_scale > 0.0, "world coord_scale must be positive");

  const auto& p = cfg.model.plan;
  require(p.query_dim > 0 && p.key_dim > 0 && p.state_dim > 0 &&
              p.b_dim > 0 && p.head_hidden > 0 && p.fusion_hidden > 0,
          "planner widths must be positive");
  require(p.path_points >= 2, "planner path_points must be at least 2");
  require(p.traj_steps >= 2, "planner traj_steps must be at least 2");
  require(p.refine_iters >= 0, "planner refine_iters must be nonnegative");
  require(p.refine_alpha > 0.0 && p.refine_alpha <= 1.0,
          "planner refine_alpha must lie in (0, 1]");
  require(p.path_spacing > 0.0, "planner path_spacing must be positive");
  require(p.coord_scale > 0.0, "planner coord_scale must be positive");
  require(p.b_floor > 0.0, "planner b_floor must be positive");
  require(p.sigma_init > model::kSigmaFloor,
          "planner sigma_init must exceed the sigma floor");

  const auto& g = cfg.generator;
  require(g.horizon_steps >= 2, "generator horizon_steps must be at least 2");
  require(g.dt > 0.0, "generator dt must be positive");
  require(g.max_attempts > 0, "generator max_attempts must be positive");
  require(g.min_speed > 0.0 && g.max_speed >= g.min_speed,
          "generator speed range must satisfy 0 < min <= max");
  require(g.min_agents >= 0 && g.max_agents >= g.min_agents,
          "generator agent range must satisfy 0 <= min <= max");
  check_positive_extents(g.ego_half_extents, "generator ego_half_extents");

  // The decoder conditions on the planned trajectory and the expert
  // supervises it point for point, so all three horizons must agree.
  require(w.horizon_steps == p.traj_steps,
          "world horizon_steps must equal planner traj_steps");
  require(g.horizon_steps == p.traj_steps,
          "generator horizon_steps must equal planner traj_steps");

  const auto& pt = cfg.pretrain;
  require(pt.beta >= 0.0 && pt.gamma >= 0.0 && pt.eta >= 0.0 &&
              pt.semantic >= 0.0 && pt.aux_weight >= 0.0,
          "pretrain loss weights must be nonnegative");
  require(pt.epochs >= 0, "pretrain epochs must be nonnegative");
  require(pt.learning_rate > 0.0, "pretrain learning_rate must be positive");
  require(pt.batch_size > 0, "pretrain batch_size must be positive");
  require(pt.val_fraction >= 0.0 && pt.val_fraction < 1.0,
          "pretrain val_fraction must lie in [0, 1)");

  grpo::validate(cfg.rft);

  const auto& s = cfg.sft;
  require(s.collision_weight >= 0.0, "sft collision_weight must be nonnegative");
  require(s.learning_rate > 0.0, "sft learning_rate must be positive");
  require(s.epochs >= 0, "sft epochs must be nonnegative");
  require(s.batch_size > 0, "sft batch_size must be positive");
  check_positive_extents(s.ego_half_extents, "sft ego_half_extents");

  const auto& e = cfg.eval;
  require(e.accel_limit > 0.0, "eval accel_limit must be positive");
  require(e.jerk_limit > 0.0, "eval jerk_limit must be positive");
  require(e.ttc_window >= 0.0, "eval ttc_window must be nonnegative");
  require(e.ttc_samples_per_second > 0,
          "eval ttc_samples_per_second must be positive");
  check_positive_extents(e.ego_half_extents, "eval ego_half_extents");
}

ExperimentConfig desk_scale() {
  ExperimentConfig cfg;
  cfg.model.grid = {{-8.0, -12.0}, 2.0, 20, 12};
  cfg.model.world.channels = 8;
  cfg.model.world.encoder_hidden = 20;
  cfg.model.world.decoder_hidden = 20;
  cfg.model.plan.query_dim = 24;
  cfg.model.plan.key_dim = 16;
  cfg.model.plan.path_points = 12;
  cfg.model.plan.state_dim = 24;
  cfg.model.plan.b_dim = 4;
  cfg.model.plan.head_hidden = 28;
  cfg.model.plan.fusion_hidden = 28;
  cfg.pretrain.epochs = 200;
  cfg.pretrain.learning_rate = 3e-4;
  // Effective KL weight lives in beta alone; lambda duplicating it would
  // overpower the entropy bonus and collapse exploration.
  cfg.rft.lambda = 0.0;
  cfg.rft.learning_rate = 1.5e-4;
  cfg.rft.epochs = 32;
  cfg.rft.batch_size = 2;
  cfg.sft.learning_rate = 1.5e-4;
  cfg.sft.epochs = 32;
  cfg.sft.batch_size = 2;
  return cfg;
}

std::string architecture(const model::ModelConfig& cfg) {
  return encode(cfg).dump();
}

std::string to_json_text(const ExperimentConfig& cfg) {
  return encode(cfg).dump(2) + "\n";
}

ExperimentConfig from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    return decode_experiment(j);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config: cannot open " + path.string());
  }
  std::stringstream buf;
  buf << in.rdbuf();
  ExperimentConfig cfg = from_json_text(buf.str());
  validate(cfg);
  return cfg;
}

void save(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw ConfigError("config: cannot open " + path.string() + " for writing");
  }
  out << to_json_text(cfg);
  if (!out) {
    throw ConfigError("config: failed writing " + path.string());
  }
}

}  // namespace latentplan::config
