#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latentplan/ablate.hpp"
#include "latentplan/checkpoint.hpp"
#include "latentplan/config.hpp"
#include "latentplan/grpo.hpp"
#include "latentplan/imitation.hpp"
#include "latentplan/metrics.hpp"
#include "latentplan/model.hpp"
#include "latentplan/rng.hpp"
#include "latentplan/world.hpp"

namespace {

using namespace latentplan;

// Options shared by the training and evaluation subcommands.
struct CommonOpts {
  std::string config_path;
  bool has_seed = false;
  uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path,
                  "experiment config JSON (desk-scale defaults when absent)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", opts.seed, "master seed override")
      ->each([&opts](const std::string&) { opts.has_seed = true; });
}

// Resolves the experiment config: file if given, desk-scale defaults
// otherwise, with one master seed fanned out to every stage.
config::ExperimentConfig resolve(const CommonOpts& opts) {
  config::ExperimentConfig cfg = opts.config_path.empty()
                                     ? config::desk_scale()
                                     : config::load(opts.config_path);
  if (opts.has_seed) cfg.seed = opts.seed;
  cfg.pretrain.seed = cfg.seed;
  cfg.rft.seed = cfg.seed;
  cfg.sft.seed = cfg.seed;
  config::validate(cfg);
  return cfg;
}

void print_resolved(const config::ExperimentConfig& cfg) {
  std::cout << "resolved config:\n" << config::to_json_text(cfg);
}

checkpoint::Snapshot load_for(const model::Model& m,
                              const std::string& path) {
  return checkpoint::load(path, config::architecture(m.config()));
}

int run_gen(int count, const std::string& difficulty, uint64_t seed,
            const std::string& out, const CommonOpts& opts) {
  const auto cfg = resolve(opts);
  const auto d = world::difficulty_from_string(difficulty);
  std::cout << "resolved config:\n"
            << "  count: " << count << "\n  difficulty: " << to_string(d)
            << "\n  seed: " << seed << "\n  out: " << out << "\n";
  const auto corpus =
      ablate::sample_corpus(count, d, cfg.generator, seed, "corpus");
  world::write_corpus(out, corpus);
  std::cout << "wrote " << corpus.size() << " scenarios to " << out << "\n";
  return 0;
}

int run_pretrain(const std::string& corpus_path, const std::string& out,
                 const std::string& log_path, const CommonOpts& opts) {
  const auto cfg = resolve(opts);
  print_resolved(cfg);
  const auto corpus = world::read_corpus(corpus_path);
  const model::Model m(cfg.model);
  auto result =
      imitation::pretrain(m, corpus, m.init_params(cfg.seed), cfg.pretrain);
  if (!log_path.empty()) imitation::write_training_log(log_path, result.log);

  checkpoint::Snapshot snap;
  snap.arch = config::architecture(cfg.model);
  snap.params = std::move(result.params);
  snap.opt = std::move(result.opt);
  snap.rng_state = Rng(cfg.seed).save_state();
  snap.training_step = snap.opt.step_count;
  checkpoint::save(out, snap);
  std::cout << "wrote checkpoint " << out << " after " << snap.training_step
            << " steps\n";
  return 0;
}

int run_rft(const std::string& ckpt_in, const std::string& corpus_path,
            const std::string& out, const std::string& log_path,
            const CommonOpts& opts) {
  const auto cfg = resolve(opts);
  print_resolved(cfg);
  const auto corpus = world::read_corpus(corpus_path);
  const model::Model m(cfg.model);
  // The incoming checkpoint provides both the starting point and the
  // frozen reference policy.
  auto snap = load_for(m, ckpt_in);
  auto result = grpo::rft(m, corpus, snap.params, cfg.rft);
  if (!log_path.empty()) grpo::write_rft_log(log_path, result.log);

  snap.params = std::move(result.params);
  snap.opt = std::move(result.opt);
  snap.rng_state = Rng(cfg.seed).save_state();
  snap.training_step += result.log.size();
  checkpoint::save(out, snap);
  std::cout << "wrote checkpoint " << out << " after " << result.log.size()
            << " fine-tuning steps\n";
  return 0;
}

int run_eval(const std::string& ckpt_in, const std::string& corpus_path,
             const std::string& report, bool with_pdms,
             const CommonOpts& opts) {
  const auto cfg = resolve(opts);
  print_resolved(cfg);
  const auto corpus = world::read_corpus(corpus_path);
  const model::Model m(cfg.model);
  const auto snap = load_for(m, ckpt_in);
  const auto rep =
      metrics::evaluate(m, snap.params, corpus, cfg.eval, with_pdms);
  metrics::write_report_csv(report, rep);
  std::cout << "ade_avg " << rep.ade_avg << "  collision_rate "
            << rep.collision_rate << (with_pdms ? "  pdms " : "")
            << (with_pdms ? std::to_string(rep.pdms) : std::string())
            << "\nwrote report " << report << "\n";
  return 0;
}

int run_ablate(const std::string& suite, const std::string& out_dir,
               int train_count, int eval_count, const std::string& difficulty,
               const CommonOpts& opts) {
  ablate::AblateConfig a;
  a.experiment = resolve(opts);
  a.train_count = train_count;
  a.eval_count = eval_count;
  a.difficulty = world::difficulty_from_string(difficulty);
  print_resolved(a.experiment);
  std::cout << "  suite: " << suite << "\n  train_count: " << a.train_count
            << "\n  eval_count: " << a.eval_count
            << "\n  difficulty: " << to_string(a.difficulty) << "\n";
  const auto table = ablate::run_suite(suite, a);
  const auto path = ablate::write_table(out_dir, table);
  std::cout << "wrote " << path.string() << " (" << table.rows.size()
            << " rows)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent world model planning experiments"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a scenario corpus");
  int gen_count = 0;
  std::string gen_difficulty = "medium";
  uint64_t gen_seed = 0;
  std::string gen_out;
  CommonOpts gen_opts;
  gen->add_option("--count", gen_count, "number of scenarios")
      ->required()
      ->check(CLI::PositiveNumber);
  gen->add_option("--difficulty", gen_difficulty, "easy | medium | hard")
      ->check(CLI::IsMember({"easy", "medium", "hard"}));
  gen->add_option("--seed", gen_seed, "corpus seed");
  gen->add_option("--out", gen_out, "output corpus JSONL")->required();
  gen->add_option("--config", gen_opts.config_path,
                  "experiment config JSON (generator block is used)")
      ->check(CLI::ExistingFile);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "imitation pretraining");
  std::string pre_corpus, pre_out, pre_log;
  CommonOpts pre_opts;
  pre->add_option("--corpus", pre_corpus, "training corpus JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "output checkpoint")->required();
  pre->add_option("--log", pre_log, "optional per-epoch CSV log");
  add_common(pre, pre_opts);

  // rft
  auto* rft = app.add_subcommand("rft", "collision-aware fine-tuning");
  std::string rft_ckpt, rft_corpus, rft_out, rft_log;
  CommonOpts rft_opts;
  rft->add_option("--ckpt", rft_ckpt, "input checkpoint (also the reference)")
      ->required()
      ->check(CLI::ExistingFile);
  rft->add_option("--corpus", rft_corpus, "training corpus JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  rft->add_option("--out", rft_out, "output checkpoint")->required();
  rft->add_option("--log", rft_log, "optional per-step CSV log");
  add_common(rft, rft_opts);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_corpus, ev_report;
  bool ev_pdms = false;
  CommonOpts ev_opts;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--corpus", ev_corpus, "evaluation corpus JSONL")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--report", ev_report, "output CSV report")->required();
  ev->add_flag("--pdms", ev_pdms, "include driving-score subscores");
  add_common(ev, ev_opts);

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation suite");
  std::string ab_suite, ab_out, ab_difficulty = "medium";
  int ab_train = 120, ab_eval = 40;
  CommonOpts ab_opts;
  ab->add_option("--suite", ab_suite, "refine-k | rft-vs-sft | group-size | path-config")
      ->required()
      ->check(CLI::IsMember(ablate::suite_names()));
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--train-count", ab_train, "training scenarios per variant")
      ->check(CLI::PositiveNumber);
  ab->add_option("--eval-count", ab_eval, "held-out scenarios")
      ->check(CLI::PositiveNumber);
  ab->add_option("--difficulty", ab_difficulty, "easy | medium | hard")
      ->check(CLI::IsMember({"easy", "medium", "hard"}));
  add_common(ab, ab_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      return run_gen(gen_count, gen_difficulty, gen_seed, gen_out, gen_opts);
    }
    if (pre->parsed()) {
      return run_pretrain(pre_corpus, pre_out, pre_log, pre_opts);
    }
    if (rft->parsed()) {
      return run_rft(rft_ckpt, rft_corpus, rft_out, rft_log, rft_opts);
    }
    if (ev->parsed()) {
      return run_eval(ev_ckpt, ev_corpus, ev_report, ev_pdms, ev_opts);
    }
    if (ab->parsed()) {
      return run_ablate(ab_suite, ab_out, ab_train, ab_eval, ab_difficulty,
                        ab_opts);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
