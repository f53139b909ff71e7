#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentplan::nnet {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Misuse of the tape lifecycle (double backward, foreign node id, ...).
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

// Dense row-major matrix of doubles. Deliberately minimal; all math
// lives in the tape ops.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  Mat(int r, int c, std::vector<double> d);

  static Mat row_vector(std::span<const double> v);
  static Mat scalar(double v);

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const {
    return data[static_cast<size_t>(r) * cols + c];
  }
  size_t size() const { return data.size(); }
};

// Reverse-mode tape over matrix-valued nodes. One graph per tape; nodes
// execute eagerly on creation and backward replays them in reverse.
// Node order is fixed by construction, so gradient accumulation is
// deterministic. backward() may run once per tape.
class Tape {
 public:
  using Id = int32_t;

  Tape() = default;
  explicit Tape(std::span<const double> params) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // -- leaves -- //
  Id constant(Mat v);                        // no gradient
  Id input(Mat v);                           // gradient tracked
  Id param(size_t offset, int rows, int cols);  // view into the flat params

  // -- elementwise -- //
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id div(Id a, Id b);
  Id scale(Id a, double k);
  Id add_scalar(Id a, double c);
  Id add_scaled(Id a, Id b, double k);  // a + k * b
  Id tanh_(Id a);
  Id relu(Id a);
  Id softplus(Id a);
  Id exp_(Id a);
  Id log_(Id a);
  Id abs_(Id a);
  Id square(Id a);
  Id sqrt_(Id a);
  Id min_(Id a, Id b);  // ties take the first argument's gradient
  Id max_(Id a, Id b);
  Id clamp_(Id a, double lo, double hi);  // zero gradient strictly outside

  // -- shape -- //
  Id concat_cols(std::span<const Id> parts);
  Id concat_rows(std::span<const Id> parts);
  Id slice_rows(Id a, int r0, int n);
  Id slice_cols(Id a, int c0, int n);
  Id reshape(Id a, int rows, int cols);

  // -- reductions -- //
  Id sum(Id a);       // 1x1
  Id mean(Id a);      // 1x1
  Id row_sums(Id a);  // r x c -> r x 1
  Id col_sums(Id a);  // r x c -> 1 x c
  // Running sums down the row index, per column.
  Id cumsum_rows(Id a);

  // -- linear algebra -- //
  Id matmul(Id a, Id b);     // (r x k)(k x c)
  Id matmul_nt(Id a, Id b);  // a * b^T, (r x k)(c x k) -> r x c
  // x (r x in), w (out x in), bias (1 x out) broadcast over rows.
  Id linear(Id x, Id w, Id bias);
  Id softmax_rows(Id a);

  // -- grid ops -- //
  // grid is (h*w) x c, cell-major with index j*w + i. Gathers the
  // (2r+1)^2 neighborhood of every cell with zero padding outside.
  Id stencil(Id grid, int h, int w, int radius);
  // coords is p x 2 holding continuous cell-center coordinates
  // (cx, cy); cx = 0 is the center of column 0. Samples bilinearly with
  // clamping; clamped axes get zero positional gradient.
  Id bilinear(Id grid, Id coords, int h, int w);

  // Copies a node's current value into a fresh constant.
  Id detach(Id a);

  const Mat& val(Id id) const;
  const Mat& grad(Id id);  // zeros until backward touches the node

  // Seeds d(scalar)/d(scalar) = 1 and propagates. `scalar` must be 1x1.
  void backward(Id scalar);
  bool backward_done() const { return backward_done_; }

  // Adds accumulated parameter gradients into `out`, which must span
  // the same flat parameter vector the tape was built over.
  void accumulate_param_grads(std::span<double> out) const;

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;  // allocated lazily
    bool needs_grad = false;
    std::function<void()> back;  // empty for leaves/constants
  };

  Id push(Mat val, bool needs_grad, std::function<void()> back = {});
  Node& node(Id id);
  const Node& node(Id id) const;
  Mat& grad_buf(Id id);  // allocates zeros on first touch
  void check(Id id) const;

  std::vector<Node> nodes_;
  std::span<const double> params_;
  std::vector<std::pair<Id, size_t>> param_nodes_;  // node id, flat offset
  bool backward_done_ = false;
};

}  // namespace latentplan::nnet
