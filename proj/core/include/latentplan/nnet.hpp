#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latentplan/rng.hpp"
#include "latentplan/tape.hpp"

namespace latentplan::nnet {

// Numerical failure during optimization (non-finite gradient or loss).
struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Activation { kTanh, kRelu, kIdentity };

// Fully-connected net whose parameters live in an external flat vector.
// Flat layout, layer by layer: weight matrix (out x in, row-major),
// then bias (out). The last layer is always linear; hidden layers use
// `hidden_act`.
struct DenseNet {
  std::vector<int> sizes;  // input, hidden..., output
  Activation hidden_act = Activation::kTanh;

  size_t param_count() const;
  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }

  // Builds the graph for a row-batched input (rows are independent
  // samples). Parameters start at `offset` in the tape's flat vector.
  Tape::Id apply(Tape& t, Tape::Id x, size_t offset) const;

  // Xavier-uniform weights, zero biases, drawn from `rng` in layout order.
  void init_params(std::span<double> dst, Rng& rng) const;

  // Flat offset and element count of the final layer (weights + bias),
  // for heads that start as the zero function.
  size_t last_layer_offset() const;
  size_t last_layer_count() const;
};

// Layer matrices [W0, b0, W1, b1, ...] copied out of the flat vector.
std::vector<Mat> unflatten(const DenseNet& net, std::span<const double> params);
// Inverse of unflatten; checks every shape against the net.
std::vector<double> flatten(const DenseNet& net, std::span<const Mat> layers);

// Single forward pass bundled with its recording; supports exactly one
// backward sweep.
class GradTape {
 public:
  std::span<const double> output() const;

 private:
  friend GradTape forward(const DenseNet&, std::span<const double>,
                          std::span<const double>);
  friend std::pair<std::vector<double>, std::vector<double>> backward(
      GradTape&, std::span<const double>);

  std::unique_ptr<Tape> tape_;
  Tape::Id input_id_ = 0;
  Tape::Id output_id_ = 0;
  size_t param_count_ = 0;
  bool used_ = false;
};

// Runs `net` on a single input vector, recording the graph. `params`
// must hold exactly net.param_count() values.
GradTape forward(const DenseNet& net, std::span<const double> params,
                 std::span<const double> input);

// Pulls (parameter gradients, input gradients) for the scalar product
// of the output with `output_grad`. Throws UsageError on reuse.
std::pair<std::vector<double>, std::vector<double>> backward(
    GradTape& tape, std::span<const double> output_grad);

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t step_count = 0;
  std::vector<double> m;  // first moment (adam only)
  std::vector<double> v;  // second moment (adam only)

  static OptimizerState sgd(double lr);
  static OptimizerState adam(double lr, size_t param_count);
};

// Applies one update in place. Any non-finite gradient aborts the step
// before touching parameters or moments, via NumericsError.
void apply_step(OptimizerState& opt, std::span<double> params,
                std::span<const double> grads);

// Maps named parameter groups onto disjoint ranges of one flat vector.
class ParamLayout {
 public:
  struct Entry {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
  };

  // Reserves `count` slots under `name`; returns the group offset.
  size_t add(std::string name, size_t count);
  size_t total() const { return total_; }
  const Entry& find(std::string_view name) const;
  std::span<const Entry> entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  size_t total_ = 0;
};

}  // namespace latentplan::nnet
