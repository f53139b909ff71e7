#include "latentplan/ablate.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "latentplan/grpo.hpp"
#include "latentplan/imitation.hpp"
#include "latentplan/metrics.hpp"
#include "latentplan/model.hpp"
#include "latentplan/rng.hpp"

namespace latentplan::ablate {

namespace {

// Both corpora and every stage seed derive from the experiment seed.
config::ExperimentConfig seeded(const AblateConfig& a) {
  config::ExperimentConfig exp = a.experiment;
  exp.pretrain.seed = exp.seed;
  exp.rft.seed = exp.seed;
  exp.sft.seed = exp.seed;
  return exp;
}

struct Corpora {
  std::vector<world::Scenario> train;
  std::vector<world::Scenario> eval;
};

Corpora corpora(const AblateConfig& a) {
  const auto& gen = a.experiment.generator;
  const uint64_t seed = a.experiment.seed;
  return {sample_corpus(a.train_count, a.difficulty, gen, seed, "ablate.train"),
          sample_corpus(a.eval_count, a.difficulty, gen, seed, "ablate.eval")};
}

std::string metrics_columns() {
  return "ade_1s,ade_2s,ade_3s,ade_avg,collision_rate,pdms";
}

std::string metrics_row(const model::Model& m, std::span<const double> params,
                        std::span<const world::Scenario> eval_set,
                        const metrics::EvalThresholds& thr) {
  const auto report = metrics::evaluate(m, params, eval_set, thr, true);
  std::ostringstream out;
  out.precision(17);
  out << report.ade_1s << ',' << report.ade_2s << ',' << report.ade_3s << ','
      << report.ade_avg << ',' << report.collision_rate << ',' << report.pdms;
  return out.str();
}

std::vector<double> pretrained(const config::ExperimentConfig& exp,
                               std::span<const world::Scenario> train) {
  const model::Model m(exp.model);
  return imitation::pretrain(m, train, m.init_params(exp.seed), exp.pretrain)
      .params;
}

}  // namespace

std::vector<world::Scenario> sample_corpus(int count, world::Difficulty d,
                                           const world::GeneratorConfig& gen,
                                           uint64_t seed,
                                           std::string_view stream) {
  if (count < 0) {
    throw std::invalid_argument("ablate: corpus count must be nonnegative");
  }
  Rng r(seed, stream);
  std::vector<world::Scenario> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    out.push_back(world::generate_scenario(r.next_u64(), d, gen));
  }
  return out;
}

Table refine_k(const AblateConfig& a) {
  const auto sets = corpora(a);
  Table t{"refine-k", "refine_iters," + metrics_columns(), {}};
  for (int k : {0, 1, 3, 6}) {
    auto exp = seeded(a);
    exp.model.plan.refine_iters = k;
    const model::Model m(exp.model);
    const auto params = pretrained(exp, sets.train);
    t.rows.push_back(std::to_string(k) + "," +
                     metrics_row(m, params, sets.eval, exp.eval));
  }
  return t;
}

Table rft_vs_sft(const AblateConfig& a) {
  const auto sets = corpora(a);
  const auto exp = seeded(a);
  const model::Model m(exp.model);
  const auto base = pretrained(exp, sets.train);

  Table t{"rft-vs-sft", "stage," + metrics_columns(), {}};
  t.rows.push_back("pretrain," + metrics_row(m, base, sets.eval, exp.eval));
  const auto tuned = grpo::rft(m, sets.train, base, exp.rft);
  t.rows.push_back("rft," + metrics_row(m, tuned.params, sets.eval, exp.eval));
  const auto matched = grpo::sft(m, sets.train, base, exp.sft);
  t.rows.push_back("sft," +
                   metrics_row(m, matched.params, sets.eval, exp.eval));
  return t;
}

Table group_size(const AblateConfig& a) {
  const auto sets = corpora(a);
  const auto exp = seeded(a);
  const model::Model m(exp.model);
  const auto base = pretrained(exp, sets.train);

  Table t{"group-size", "group_size," + metrics_columns(), {}};
  for (int g : {5, 10, 15}) {
    auto cfg = exp.rft;
    cfg.group_size = g;
    const auto tuned = grpo::rft(m, sets.train, base, cfg);
    t.rows.push_back(std::to_string(g) + "," +
                     metrics_row(m, tuned.params, sets.eval, exp.eval));
  }
  return t;
}

Table path_config(const AblateConfig& a) {
  const auto sets = corpora(a);
  Table t{"path-config", "path_points,path_spacing," + metrics_columns(), {}};
  for (int n : {6, 12, 24}) {
    for (double spacing : {1.0, 2.0}) {
      auto exp = seeded(a);
      exp.model.plan.path_points = n;
      exp.model.plan.path_spacing = spacing;
      const model::Model m(exp.model);
      const auto params = pretrained(exp, sets.train);
      std::ostringstream label;
      label.precision(17);
      label << n << ',' << spacing;
      t.rows.push_back(label.str() + "," +
                       metrics_row(m, params, sets.eval, exp.eval));
    }
  }
  return t;
}

std::vector<std::string> suite_names() {
  return {"refine-k", "rft-vs-sft", "group-size", "path-config"};
}

Table run_suite(const std::string& suite, const AblateConfig& cfg) {
  if (suite == "refine-k") return refine_k(cfg);
  if (suite == "rft-vs-sft") return rft_vs_sft(cfg);
  if (suite == "group-size") return group_size(cfg);
  if (suite == "path-config") return path_config(cfg);
  throw std::invalid_argument("ablate: unknown suite '" + suite + "'");
}

std::filesystem::path write_table(const std::filesystem::path& dir,
                                  const Table& t) {
  std::filesystem::create_directories(dir);
  const auto path = dir / (t.name + ".csv");
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("ablate: cannot open " + path.string() +
                             " for writing");
  }
  out << t.header << '\n';
  for (const std::string& row : t.rows) out << row << '\n';
  if (!out) {
    throw std::runtime_error("ablate: failed writing " + path.string());
  }
  return path;
}

}  // namespace latentplan::ablate
