#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "latentplan/config.hpp"
#include "latentplan/world.hpp"

namespace latentplan::ablate {

// Shared setup for the ablation suites: a base experiment plus the
// corpus sizes every variant trains and evaluates on. Variants differ
// from the base in exactly the swept fields, and all of them share the
// same parameter initialization and corpora, so rows are paired.
struct AblateConfig {
  config::ExperimentConfig experiment = config::desk_scale();
  int train_count = 120;
  int eval_count = 40;
  world::Difficulty difficulty = world::Difficulty::kMedium;
};

// Scenario seeds come from a named substream of `seed`, so the same
// arguments always rebuild the identical corpus.
std::vector<world::Scenario> sample_corpus(int count, world::Difficulty d,
                                           const world::GeneratorConfig& gen,
                                           uint64_t seed,
                                           std::string_view stream = "corpus");

struct Table {
  std::string name;  // suite name, doubles as the CSV file stem
  std::string header;
  std::vector<std::string> rows;
};

// Refinement sweeps K in {0, 1, 3, 6}; each K pretrains from the same
// initialization and reports held-out metrics.
Table refine_k(const AblateConfig& cfg);
// One pretrained model branched three ways: left as is, fine-tuned on
// collision rewards, and fine-tuned by the supervised comparator at a
// matched budget.
Table rft_vs_sft(const AblateConfig& cfg);
// Rollout group sizes {5, 10, 15} fine-tuned from one pretrained model.
Table group_size(const AblateConfig& cfg);
// Spatial path shapes: point counts {6, 12, 24} by spacings {1, 2} m.
Table path_config(const AblateConfig& cfg);

std::vector<std::string> suite_names();
// Dispatch by name; unknown suites throw std::invalid_argument.
Table run_suite(const std::string& suite, const AblateConfig& cfg);

// Writes <dir>/<name>.csv, creating the directory if needed, and
// returns the path.
std::filesystem::path write_table(const std::filesystem::path& dir,
                                  const Table& t);

}  // namespace latentplan::ablate
