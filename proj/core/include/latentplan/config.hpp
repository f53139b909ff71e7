#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "latentplan/grpo.hpp"
#include "latentplan/imitation.hpp"
#include "latentplan/metrics.hpp"
#include "latentplan/model.hpp"
#include "latentplan/world.hpp"

namespace latentplan::config {

// Unreadable or malformed configuration text.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One document holding every knob an experiment needs: model shapes,
// scenario generation, both training stages, the supervised
// comparator, and evaluation thresholds.
struct ExperimentConfig {
  model::ModelConfig model;
  world::GeneratorConfig generator;
  imitation::PretrainConfig pretrain;
  grpo::RftConfig rft;
  grpo::SftConfig sft;
  metrics::EvalThresholds eval;
  std::string train_corpus;
  std::string val_corpus;
  uint64_t seed = 0;
};

// Range checks for every block plus cross-module consistency: the
// world decoder, planner, and scenario generator must agree on the
// trajectory horizon. Throws std::invalid_argument naming the field.
void validate(const ExperimentConfig& cfg);

// Compact preset sized to train in minutes on one core while leaving
// the loss structure intact: a 40 m x 24 m grid of 2 m cells and
// narrow hidden layers, with learning rates raised to match.
ExperimentConfig desk_scale();

// Canonical single-line JSON naming every field that determines
// parameter shapes or what the weights mean. Checkpoints store this
// string and refuse to load into a model that reports a different one.
std::string architecture(const model::ModelConfig& cfg);

// Pretty-printed JSON with deterministic key order.
std::string to_json_text(const ExperimentConfig& cfg);

// Inverse of to_json_text. Absent keys keep their defaults so partial
// override files stay short; unknown keys and type mismatches throw
// ConfigError.
ExperimentConfig from_json_text(const std::string& text);

// Reads, parses, and validates.
ExperimentConfig load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const ExperimentConfig& cfg);

}  // namespace latentplan::config
