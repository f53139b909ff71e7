#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentplan/geom.hpp"
#include "latentplan/nnet.hpp"
#include "latentplan/rng.hpp"

namespace latentplan::world {

// Raised when constraint-respecting scenario sampling exhausts its
// retry budget; the message echoes the offending seed.
struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Difficulty { kEasy, kMedium, kHard };
enum class Command { kLeft, kStraight, kRight };

std::string to_string(Difficulty d);
std::string to_string(Command c);
Difficulty difficulty_from_string(const std::string& s);
Command command_from_string(const std::string& s);

struct EgoState {
  geom::Point2 position;  // world frame
  double heading = 0.0;
  double speed = 0.0;
};

struct AgentPose {
  geom::Point2 position;  // world frame
  double heading = 0.0;
};

// A scripted traffic agent: fixed box dimensions, one pose per step.
// poses[k] is the pose at time k * dt; scripts span the planning
// horizon plus the initial step.
struct AgentTrack {
  geom::Point2 half_extents{2.25, 1.0};
  std::vector<AgentPose> poses;

  geom::OrientedBox box_at(size_t step) const;  // clamps past the script end
};

// One synthetic driving scene. World-frame content (agents, drivable
// area, route) is expressed in a global frame; the expert trajectory is
// relative to the ego pose, matching how plans are produced.
struct Scenario {
  uint64_t seed = 0;
  Difficulty difficulty = Difficulty::kMedium;
  Command command = Command::kStraight;
  EgoState ego_start;
  std::vector<AgentTrack> agents;
  geom::Polygon2 drivable;
  std::vector<geom::Point2> route;
  geom::Trajectory expert;  // ego frame, expert.points[j] at (j+1)*dt
};

struct GeneratorConfig {
  int horizon_steps = 6;
  double dt = 0.5;
  int max_attempts = 400;
  double min_speed = 3.0;
  double max_speed = 8.0;
  int min_agents = 1;
  int max_agents = 3;
  geom::Point2 ego_half_extents{2.25, 1.0};
};

// Deterministic function of (seed, difficulty): redrawing with the same
// arguments rebuilds the identical scene. Constraint targets per
// difficulty, measured against the expert's future path:
//   easy   - every agent keeps at least 2 m box clearance at all times
//   medium - the expert stays collision free but some agent passes
//            within 5 m of the expert path
//   hard   - as medium, with the closest pass within 3.5 m
Scenario generate_scenario(uint64_t seed, Difficulty difficulty,
                           const GeneratorConfig& cfg = {});

// The scene half a step later: ego advances to the first expert point,
// agent scripts shift left (holding their final pose), and the expert
// is re-expressed in the new ego frame with a constant-velocity point
// appended to keep its length.
Scenario advance_one_step(const Scenario& s);

// Expert path in world coordinates, ego position prepended.
std::vector<geom::Point2> expert_world_path(const Scenario& s);

// Bird's-eye feature grid, one row of channels per cell (cell index
// j * width + i).
struct LatentGrid {
  geom::GridSpec spec;
  int channels = 0;
  std::vector<double> values;  // cell-major: values[cell * channels + c]

  LatentGrid() = default;
  LatentGrid(const geom::GridSpec& sp, int ch)
      : spec(sp), channels(ch),
        values(static_cast<size_t>(sp.cell_count()) * ch, 0.0) {}
  double at(int cell, int c) const {
    return values[static_cast<size_t>(cell) * channels + c];
  }
  double& at(int cell, int c) {
    return values[static_cast<size_t>(cell) * channels + c];
  }
};

// Input raster planes, in the ego frame: agent occupancy, drivable
// mask, route direction x, route direction y, ego speed.
inline constexpr int kRasterPlanes = 5;
nnet::Mat rasterize(const Scenario& s, const geom::GridSpec& grid);

struct WorldModelConfig {
  int channels = 16;        // latent channels per cell
  int encoder_hidden = 32;
  int decoder_hidden = 64;
  int encoder_radius = 0;   // raster neighborhood fed to the encoder
  int decoder_radius = 1;   // latent neighborhood fed to the decoder
  int horizon_steps = 6;    // trajectory length the decoder conditions on
  double coord_scale = 0.1; // meters to network input units
};

// Per-cell encoder/decoder pair over a fixed grid. Parameters live in
// an external flat vector: encoder block first, then decoder block.
class WorldModel {
 public:
  WorldModel(const WorldModelConfig& cfg, const geom::GridSpec& grid);

  const WorldModelConfig& config() const { return cfg_; }
  const geom::GridSpec& grid() const { return grid_; }
  const nnet::DenseNet& encoder() const { return encoder_; }
  const nnet::DenseNet& decoder() const { return decoder_; }
  size_t encoder_offset() const { return 0; }
  size_t decoder_offset() const { return encoder_.param_count(); }
  size_t param_count() const;

  // Graph-building entry points. `offset` locates this model's block
  // inside the tape's flat parameter vector. Returned nodes are
  // (cells x channels) grids.
  nnet::Tape::Id encode_on_tape(nnet::Tape& t, const Scenario& s,
                                size_t offset) const;
  // `traj_points` is a (horizon x 2) node of ego-frame points; the
  // decoder sees them scaled by coord_scale.
  nnet::Tape::Id predict_on_tape(nnet::Tape& t, nnet::Tape::Id latent,
                                 nnet::Tape::Id traj_points,
                                 size_t offset) const;

  // Value-level wrappers over the tape path.
  LatentGrid encode(const Scenario& s, std::span<const double> params) const;
  LatentGrid predict_next(const LatentGrid& latent,
                          const geom::Trajectory& traj,
                          std::span<const double> params) const;

 private:
  WorldModelConfig cfg_;
  geom::GridSpec grid_;
  nnet::DenseNet encoder_;
  nnet::DenseNet decoder_;
};

// Mean squared error between two grids of identical shape.
double reconstruction_loss(const LatentGrid& predicted,
                           const LatentGrid& actual);

// -- corpus io: one JSON object per line -- //

std::string scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const std::string& line);
void write_corpus(const std::filesystem::path& path,
                  std::span<const Scenario> scenarios);
std::vector<Scenario> read_corpus(const std::filesystem::path& path);

}  // namespace latentplan::world
