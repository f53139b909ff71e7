#include "latentplan/tape.hpp"

#include <algorithm>
#include <cmath>

namespace latentplan::nnet {

Mat::Mat(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != static_cast<size_t>(r) * c) {
    throw ShapeError("Mat: data length does not match shape");
  }
}

Mat Mat::row_vector(std::span<const double> v) {
  Mat m(1, static_cast<int>(v.size()));
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

Mat Mat::scalar(double v) {
  Mat m(1, 1);
  m.data[0] = v;
  return m;
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

}  // namespace

// -- plumbing -- //

Tape::Id Tape::push(Mat val, bool needs_grad, std::function<void()> back) {
  nodes_.push_back(Node{std::move(val), Mat{}, needs_grad, std::move(back)});
  return static_cast<Id>(nodes_.size() - 1);
}

void Tape::check(Id id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
    throw UsageError("tape: node id does not belong to this tape");
  }
}

Tape::Node& Tape::node(Id id) {
  check(id);
  return nodes_[static_cast<size_t>(id)];
}

const Tape::Node& Tape::node(Id id) const {
  check(id);
  return nodes_[static_cast<size_t>(id)];
}

Mat& Tape::grad_buf(Id id) {
  Node& n = node(id);
  if (n.grad.data.empty()) n.grad = Mat(n.val.rows, n.val.cols);
  return n.grad;
}

const Mat& Tape::val(Id id) const { return node(id).val; }

const Mat& Tape::grad(Id id) { return grad_buf(id); }

void Tape::backward(Id scalar) {
  if (backward_done_) throw UsageError("tape: backward may only run once");
  const Node& out = node(scalar);
  if (out.val.rows != 1 || out.val.cols != 1) {
    throw ShapeError("tape: backward seed must be 1x1");
  }
  backward_done_ = true;
  grad_buf(scalar).data[0] = 1.0;
  for (Id id = scalar; id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.needs_grad && n.back && !n.grad.data.empty()) n.back();
  }
}

void Tape::accumulate_param_grads(std::span<double> out) const {
  if (out.size() != params_.size()) {
    throw ShapeError("tape: gradient buffer does not match parameter vector");
  }
  for (const auto& [id, offset] : param_nodes_) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty()) continue;
    for (size_t k = 0; k < n.grad.data.size(); ++k) {
      out[offset + k] += n.grad.data[k];
    }
  }
}

// -- leaves -- //

Tape::Id Tape::constant(Mat v) { return push(std::move(v), false); }

Tape::Id Tape::input(Mat v) { return push(std::move(v), true); }

Tape::Id Tape::param(size_t offset, int rows, int cols) {
  const size_t count = static_cast<size_t>(rows) * cols;
  if (offset + count > params_.size()) {
    throw ShapeError("tape: parameter slice out of range");
  }
  Mat v(rows, cols);
  std::copy(params_.begin() + offset, params_.begin() + offset + count,
            v.data.begin());
  const Id id = push(std::move(v), true);
  param_nodes_.emplace_back(id, offset);
  return id;
}

Tape::Id Tape::detach(Id a) { return constant(val(a)); }

// -- elementwise -- //

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw ShapeError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Tape::Id Tape::add(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  require_same_shape(va, vb, "add");
  Mat out = va;
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] += vb.data[k];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      if (nodes_[a].needs_grad) {
        Mat& ga = grad_buf(a);
        for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += g.data[k];
      }
      if (nodes_[b].needs_grad) {
        Mat& gb = grad_buf(b);
        for (size_t k = 0; k < g.data.size(); ++k) gb.data[k] += g.data[k];
      }
    };
  }
  return id;
}

Tape::Id Tape::sub(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  require_same_shape(va, vb, "sub");
  Mat out = va;
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] -= vb.data[k];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      if (nodes_[a].needs_grad) {
        Mat& ga = grad_buf(a);
        for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += g.data[k];
      }
      if (nodes_[b].needs_grad) {
        Mat& gb = grad_buf(b);
        for (size_t k = 0; k < g.data.size(); ++k) gb.data[k] -= g.data[k];
      }
    };
  }
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  require_same_shape(va, vb, "mul");
  Mat out = va;
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] *= vb.data[k];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      if (nodes_[a].needs_grad) {
        Mat& ga = grad_buf(a);
        const Mat& vb2 = nodes_[b].val;
        for (size_t k = 0; k < g.data.size(); ++k)
          ga.data[k] += g.data[k] * vb2.data[k];
      }
      if (nodes_[b].needs_grad) {
        Mat& gb = grad_buf(b);
        const Mat& va2 = nodes_[a].val;
        for (size_t k = 0; k < g.data.size(); ++k)
          gb.data[k] += g.data[k] * va2.data[k];
      }
    };
  }
  return id;
}

Tape::Id Tape::div(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  require_same_shape(va, vb, "div");
  Mat out = va;
  for (size_t k = 0; k < out.data.size(); ++k) out.data[k] /= vb.data[k];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      const Mat& y = nodes_[id].val;
      const Mat& vb2 = nodes_[b].val;
      if (nodes_[a].needs_grad) {
        Mat& ga = grad_buf(a);
        for (size_t k = 0; k < g.data.size(); ++k)
          ga.data[k] += g.data[k] / vb2.data[k];
      }
      if (nodes_[b].needs_grad) {
        Mat& gb = grad_buf(b);
        for (size_t k = 0; k < g.data.size(); ++k)
          gb.data[k] -= g.data[k] * y.data[k] / vb2.data[k];
      }
    };
  }
  return id;
}

Tape::Id Tape::scale(Id a, double k) {
  Mat out = val(a);
  for (double& x : out.data) x *= k;
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, k] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += k * g.data[i];
    };
  }
  return id;
}

Tape::Id Tape::add_scalar(Id a, double c) {
  Mat out = val(a);
  for (double& x : out.data) x += c;
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
    };
  }
  return id;
}

Tape::Id Tape::add_scaled(Id a, Id b, double k) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  require_same_shape(va, vb, "add_scaled");
  Mat out = va;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += k * vb.data[i];
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b, k] {
      const Mat& g = nodes_[id].grad;
      if (nodes_[a].needs_grad) {
        Mat& ga = grad_buf(a);
        for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
      }
      if (nodes_[b].needs_grad) {
        Mat& gb = grad_buf(b);
        for (size_t i = 0; i < g.data.size(); ++i)
          gb.data[i] += k * g.data[i];
      }
    };
  }
  return id;
}

Tape::Id Tape::tanh_(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = std::tanh(x);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& y = nodes_[id].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * (1.0 - y.data[i] * y.data[i]);
    };
  }
  return id;
}

Tape::Id Tape::relu(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = std::max(x, 0.0);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& x = nodes_[a].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        if (x.data[i] > 0.0) ga.data[i] += g.data[i];
    };
  }
  return id;
}

Tape::Id Tape::softplus(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = stable_softplus(x);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& x = nodes_[a].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * stable_sigmoid(x.data[i]);
    };
  }
  return id;
}

Tape::Id Tape::exp_(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = std::exp(x);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& y = nodes_[id].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * y.data[i];
    };
  }
  return id;
}

Tape::Id Tape::log_(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = std::log(x);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& x = nodes_[a].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] / x.data[i];
    };
  }
  return id;
}

Tape::Id Tape::abs_(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = std::abs(x);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& x = nodes_[a].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i) {
        if (x.data[i] > 0.0) ga.data[i] += g.data[i];
        else if (x.data[i] < 0.0) ga.data[i] -= g.data[i];
      }
    };
  }
  return id;
}

Tape::Id Tape::square(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = x * x;
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& x = nodes_[a].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += 2.0 * g.data[i] * x.data[i];
    };
  }
  return id;
}

Tape::Id Tape::sqrt_(Id a) {
  Mat out = val(a);
  for (double& x : out.data) x = std::sqrt(x);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& y = nodes_[id].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        ga.data[i] += g.data[i] * 0.5 / y.data[i];
    };
  }
  return id;
}

Tape::Id Tape::min_(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  require_same_shape(va, vb, "min");
  Mat out = va;
  for (size_t k = 0; k < out.data.size(); ++k)
    out.data[k] = std::min(va.data[k], vb.data[k]);
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      const Mat& va2 = nodes_[a].val;
      const Mat& vb2 = nodes_[b].val;
      for (size_t k = 0; k < g.data.size(); ++k) {
        if (va2.data[k] <= vb2.data[k]) {
          if (nodes_[a].needs_grad) grad_buf(a).data[k] += g.data[k];
        } else if (nodes_[b].needs_grad) {
          grad_buf(b).data[k] += g.data[k];
        }
      }
    };
  }
  return id;
}

Tape::Id Tape::max_(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  require_same_shape(va, vb, "max");
  Mat out = va;
  for (size_t k = 0; k < out.data.size(); ++k)
    out.data[k] = std::max(va.data[k], vb.data[k]);
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      const Mat& va2 = nodes_[a].val;
      const Mat& vb2 = nodes_[b].val;
      for (size_t k = 0; k < g.data.size(); ++k) {
        if (va2.data[k] >= vb2.data[k]) {
          if (nodes_[a].needs_grad) grad_buf(a).data[k] += g.data[k];
        } else if (nodes_[b].needs_grad) {
          grad_buf(b).data[k] += g.data[k];
        }
      }
    };
  }
  return id;
}

Tape::Id Tape::clamp_(Id a, double lo, double hi) {
  if (!(lo <= hi)) throw ShapeError("clamp: lo must be <= hi");
  Mat out = val(a);
  for (double& x : out.data) x = std::clamp(x, lo, hi);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, lo, hi] {
      const Mat& g = nodes_[id].grad;
      const Mat& x = nodes_[a].val;
      Mat& ga = grad_buf(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        if (x.data[i] >= lo && x.data[i] <= hi) ga.data[i] += g.data[i];
    };
  }
  return id;
}

// -- shape ops -- //

Tape::Id Tape::concat_cols(std::span<const Id> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int rows = val(parts[0]).rows;
  int cols = 0;
  bool ng = false;
  for (const Id p : parts) {
    if (val(p).rows != rows) throw ShapeError("concat_cols: row mismatch");
    cols += val(p).cols;
    ng = ng || node(p).needs_grad;
  }
  Mat out(rows, cols);
  int c0 = 0;
  for (const Id p : parts) {
    const Mat& v = val(p);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < v.cols; ++c) out.at(r, c0 + c) = v.at(r, c);
    c0 += v.cols;
  }
  std::vector<Id> owned(parts.begin(), parts.end());
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, owned] {
      const Mat& g = nodes_[id].grad;
      int c0b = 0;
      for (const Id p : owned) {
        const int pc = nodes_[p].val.cols;
        if (nodes_[p].needs_grad) {
          Mat& gp = grad_buf(p);
          for (int r = 0; r < g.rows; ++r)
            for (int c = 0; c < pc; ++c) gp.at(r, c) += g.at(r, c0b + c);
        }
        c0b += pc;
      }
    };
  }
  return id;
}

Tape::Id Tape::concat_rows(std::span<const Id> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  const int cols = val(parts[0]).cols;
  int rows = 0;
  bool ng = false;
  for (const Id p : parts) {
    if (val(p).cols != cols) throw ShapeError("concat_rows: column mismatch");
    rows += val(p).rows;
    ng = ng || node(p).needs_grad;
  }
  Mat out(rows, cols);
  int r0 = 0;
  for (const Id p : parts) {
    const Mat& v = val(p);
    std::copy(v.data.begin(), v.data.end(),
              out.data.begin() + static_cast<size_t>(r0) * cols);
    r0 += v.rows;
  }
  std::vector<Id> owned(parts.begin(), parts.end());
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, owned] {
      const Mat& g = nodes_[id].grad;
      int r0b = 0;
      for (const Id p : owned) {
        const int pr = nodes_[p].val.rows;
        if (nodes_[p].needs_grad) {
          Mat& gp = grad_buf(p);
          for (int r = 0; r < pr; ++r)
            for (int c = 0; c < g.cols; ++c) gp.at(r, c) += g.at(r0b + r, c);
        }
        r0b += pr;
      }
    };
  }
  return id;
}

Tape::Id Tape::slice_rows(Id a, int r0, int n) {
  const Mat& v = val(a);
  if (r0 < 0 || n < 0 || r0 + n > v.rows) {
    throw ShapeError("slice_rows: range out of bounds");
  }
  Mat out(n, v.cols);
  std::copy(v.data.begin() + static_cast<size_t>(r0) * v.cols,
            v.data.begin() + static_cast<size_t>(r0 + n) * v.cols,
            out.data.begin());
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, r0] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) ga.at(r0 + r, c) += g.at(r, c);
    };
  }
  return id;
}

Tape::Id Tape::slice_cols(Id a, int c0, int n) {
  const Mat& v = val(a);
  if (c0 < 0 || n < 0 || c0 + n > v.cols) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  Mat out(v.rows, n);
  for (int r = 0; r < v.rows; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) = v.at(r, c0 + c);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, c0] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) ga.at(r, c0 + c) += g.at(r, c);
    };
  }
  return id;
}

Tape::Id Tape::reshape(Id a, int rows, int cols) {
  const Mat& v = val(a);
  if (static_cast<size_t>(rows) * cols != v.size()) {
    throw ShapeError("reshape: element count mismatch");
  }
  Mat out(rows, cols, v.data);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += g.data[k];
    };
  }
  return id;
}

// -- reductions -- //

Tape::Id Tape::sum(Id a) {
  const Mat& v = val(a);
  double acc = 0.0;
  for (const double x : v.data) acc += x;
  const bool ng = node(a).needs_grad;
  Id id = push(Mat::scalar(acc), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const double g = nodes_[id].grad.data[0];
      Mat& ga = grad_buf(a);
      for (double& x : ga.data) x += g;
    };
  }
  return id;
}

Tape::Id Tape::mean(Id a) {
  const Mat& v = val(a);
  if (v.size() == 0) throw ShapeError("mean: empty matrix");
  const double inv = 1.0 / static_cast<double>(v.size());
  return scale(sum(a), inv);
}

Tape::Id Tape::row_sums(Id a) {
  const Mat& v = val(a);
  Mat out(v.rows, 1);
  for (int r = 0; r < v.rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < v.cols; ++c) acc += v.at(r, c);
    out.at(r, 0) = acc;
  }
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (int r = 0; r < ga.rows; ++r)
        for (int c = 0; c < ga.cols; ++c) ga.at(r, c) += g.at(r, 0);
    };
  }
  return id;
}

Tape::Id Tape::col_sums(Id a) {
  const Mat& v = val(a);
  Mat out(1, v.cols);
  for (int r = 0; r < v.rows; ++r)
    for (int c = 0; c < v.cols; ++c) out.at(0, c) += v.at(r, c);
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (int r = 0; r < ga.rows; ++r)
        for (int c = 0; c < ga.cols; ++c) ga.at(r, c) += g.at(0, c);
    };
  }
  return id;
}

Tape::Id Tape::cumsum_rows(Id a) {
  const Mat& v = val(a);
  Mat out(v.rows, v.cols);
  for (int c = 0; c < v.cols; ++c) {
    double acc = 0.0;
    for (int r = 0; r < v.rows; ++r) {
      acc += v.at(r, c);
      out.at(r, c) = acc;
    }
  }
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      Mat& ga = grad_buf(a);
      for (int c = 0; c < g.cols; ++c) {
        double acc = 0.0;
        for (int r = g.rows - 1; r >= 0; --r) {
          acc += g.at(r, c);
          ga.at(r, c) += acc;
        }
      }
    };
  }
  return id;
}

// -- linear algebra -- //

Tape::Id Tape::matmul(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  if (va.cols != vb.rows) throw ShapeError("matmul: inner dimension mismatch");
  Mat out(va.rows, vb.cols);
  for (int r = 0; r < va.rows; ++r) {
    for (int k = 0; k < va.cols; ++k) {
      const double x = va.at(r, k);
      if (x == 0.0) continue;
      for (int c = 0; c < vb.cols; ++c) out.at(r, c) += x * vb.at(k, c);
    }
  }
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      const Mat& va2 = nodes_[a].val;
      const Mat& vb2 = nodes_[b].val;
      if (nodes_[a].needs_grad) {
        // dA = dY * B^T
        Mat& ga = grad_buf(a);
        for (int r = 0; r < ga.rows; ++r)
          for (int k = 0; k < ga.cols; ++k) {
            double acc = 0.0;
            for (int c = 0; c < g.cols; ++c) acc += g.at(r, c) * vb2.at(k, c);
            ga.at(r, k) += acc;
          }
      }
      if (nodes_[b].needs_grad) {
        // dB = A^T * dY
        Mat& gb = grad_buf(b);
        for (int r = 0; r < va2.rows; ++r)
          for (int k = 0; k < va2.cols; ++k) {
            const double x = va2.at(r, k);
            if (x == 0.0) continue;
            for (int c = 0; c < g.cols; ++c) gb.at(k, c) += x * g.at(r, c);
          }
      }
    };
  }
  return id;
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  if (va.cols != vb.cols) throw ShapeError("matmul_nt: inner dimension mismatch");
  Mat out(va.rows, vb.rows);
  for (int r = 0; r < va.rows; ++r)
    for (int c = 0; c < vb.rows; ++c) {
      double acc = 0.0;
      for (int k = 0; k < va.cols; ++k) acc += va.at(r, k) * vb.at(c, k);
      out.at(r, c) = acc;
    }
  const bool ng = node(a).needs_grad || node(b).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a, b] {
      const Mat& g = nodes_[id].grad;
      const Mat& va2 = nodes_[a].val;
      const Mat& vb2 = nodes_[b].val;
      if (nodes_[a].needs_grad) {
        // dA = dY * B
        Mat& ga = grad_buf(a);
        for (int r = 0; r < ga.rows; ++r)
          for (int c = 0; c < g.cols; ++c) {
            const double gy = g.at(r, c);
            if (gy == 0.0) continue;
            for (int k = 0; k < ga.cols; ++k)
              ga.at(r, k) += gy * vb2.at(c, k);
          }
      }
      if (nodes_[b].needs_grad) {
        // dB = dY^T * A
        Mat& gb = grad_buf(b);
        for (int r = 0; r < va2.rows; ++r)
          for (int c = 0; c < g.cols; ++c) {
            const double gy = g.at(r, c);
            if (gy == 0.0) continue;
            for (int k = 0; k < va2.cols; ++k)
              gb.at(c, k) += gy * va2.at(r, k);
          }
      }
    };
  }
  return id;
}

Tape::Id Tape::linear(Id x, Id w, Id bias) {
  const Mat& vx = val(x);
  const Mat& vw = val(w);
  const Mat& vb = val(bias);
  if (vx.cols != vw.cols) throw ShapeError("linear: input width mismatch");
  if (vb.rows != 1 || vb.cols != vw.rows) {
    throw ShapeError("linear: bias shape mismatch");
  }
  Mat out(vx.rows, vw.rows);
  for (int r = 0; r < vx.rows; ++r)
    for (int o = 0; o < vw.rows; ++o) {
      double acc = vb.at(0, o);
      for (int k = 0; k < vx.cols; ++k) acc += vx.at(r, k) * vw.at(o, k);
      out.at(r, o) = acc;
    }
  const bool ng =
      node(x).needs_grad || node(w).needs_grad || node(bias).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, x, w, bias] {
      const Mat& g = nodes_[id].grad;
      const Mat& vx2 = nodes_[x].val;
      const Mat& vw2 = nodes_[w].val;
      if (nodes_[x].needs_grad) {
        Mat& gx = grad_buf(x);
        for (int r = 0; r < gx.rows; ++r)
          for (int k = 0; k < gx.cols; ++k) {
            double acc = 0.0;
            for (int o = 0; o < g.cols; ++o) acc += g.at(r, o) * vw2.at(o, k);
            gx.at(r, k) += acc;
          }
      }
      if (nodes_[w].needs_grad) {
        Mat& gw = grad_buf(w);
        for (int r = 0; r < vx2.rows; ++r)
          for (int o = 0; o < g.cols; ++o) {
            const double gy = g.at(r, o);
            if (gy == 0.0) continue;
            for (int k = 0; k < vx2.cols; ++k)
              gw.at(o, k) += gy * vx2.at(r, k);
          }
      }
      if (nodes_[bias].needs_grad) {
        Mat& gb = grad_buf(bias);
        for (int r = 0; r < g.rows; ++r)
          for (int o = 0; o < g.cols; ++o) gb.at(0, o) += g.at(r, o);
      }
    };
  }
  return id;
}

Tape::Id Tape::softmax_rows(Id a) {
  const Mat& v = val(a);
  Mat out(v.rows, v.cols);
  for (int r = 0; r < v.rows; ++r) {
    double mx = v.at(r, 0);
    for (int c = 1; c < v.cols; ++c) mx = std::max(mx, v.at(r, c));
    double z = 0.0;
    for (int c = 0; c < v.cols; ++c) {
      const double e = std::exp(v.at(r, c) - mx);
      out.at(r, c) = e;
      z += e;
    }
    for (int c = 0; c < v.cols; ++c) out.at(r, c) /= z;
  }
  const bool ng = node(a).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, a] {
      const Mat& g = nodes_[id].grad;
      const Mat& y = nodes_[id].val;
      Mat& ga = grad_buf(a);
      for (int r = 0; r < y.rows; ++r) {
        double dotgy = 0.0;
        for (int c = 0; c < y.cols; ++c) dotgy += g.at(r, c) * y.at(r, c);
        for (int c = 0; c < y.cols; ++c)
          ga.at(r, c) += y.at(r, c) * (g.at(r, c) - dotgy);
      }
    };
  }
  return id;
}

// -- grid ops -- //

Tape::Id Tape::stencil(Id grid, int h, int w, int radius) {
  const Mat& v = val(grid);
  if (radius < 0) throw ShapeError("stencil: negative radius");
  if (v.rows != h * w) throw ShapeError("stencil: grid shape mismatch");
  const int c = v.cols;
  const int k = 2 * radius + 1;
  Mat out(h * w, k * k * c);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) {
      const int cell = j * w + i;
      int slot = 0;
      for (int dj = -radius; dj <= radius; ++dj)
        for (int di = -radius; di <= radius; ++di, ++slot) {
          const int nj = j + dj;
          const int ni = i + di;
          if (nj < 0 || nj >= h || ni < 0 || ni >= w) continue;  // zero pad
          const int src = nj * w + ni;
          for (int ch = 0; ch < c; ++ch)
            out.at(cell, slot * c + ch) = v.at(src, ch);
        }
    }
  const bool ng = node(grid).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, grid, h, w, radius, c] {
      const Mat& g = nodes_[id].grad;
      Mat& gg = grad_buf(grid);
      for (int j = 0; j < h; ++j)
        for (int i = 0; i < w; ++i) {
          const int cell = j * w + i;
          int slot = 0;
          for (int dj = -radius; dj <= radius; ++dj)
            for (int di = -radius; di <= radius; ++di, ++slot) {
              const int nj = j + dj;
              const int ni = i + di;
              if (nj < 0 || nj >= h || ni < 0 || ni >= w) continue;
              const int src = nj * w + ni;
              for (int ch = 0; ch < c; ++ch)
                gg.at(src, ch) += g.at(cell, slot * c + ch);
            }
        }
    };
  }
  return id;
}

namespace {

struct BilinearCell {
  int i0, j0, i1, j1;
  double u, v;
  bool clamp_x, clamp_y;
};

BilinearCell locate(double cx, double cy, int h, int w) {
  BilinearCell b{};
  b.clamp_x = cx < 0.0 || cx > w - 1;
  b.clamp_y = cy < 0.0 || cy > h - 1;
  const double x = std::clamp(cx, 0.0, static_cast<double>(w - 1));
  const double y = std::clamp(cy, 0.0, static_cast<double>(h - 1));
  b.i0 = std::min(static_cast<int>(std::floor(x)), std::max(w - 2, 0));
  b.j0 = std::min(static_cast<int>(std::floor(y)), std::max(h - 2, 0));
  b.i1 = std::min(b.i0 + 1, w - 1);
  b.j1 = std::min(b.j0 + 1, h - 1);
  b.u = x - b.i0;
  b.v = y - b.j0;
  return b;
}

}  // namespace

Tape::Id Tape::bilinear(Id grid, Id coords, int h, int w) {
  const Mat& vg = val(grid);
  const Mat& vc = val(coords);
  if (vg.rows != h * w) throw ShapeError("bilinear: grid shape mismatch");
  if (vc.cols != 2) throw ShapeError("bilinear: coords must be p x 2");
  if (h < 1 || w < 1) throw ShapeError("bilinear: empty grid");
  const int c = vg.cols;
  const int p = vc.rows;
  Mat out(p, c);
  for (int r = 0; r < p; ++r) {
    const BilinearCell b = locate(vc.at(r, 0), vc.at(r, 1), h, w);
    const int c00 = b.j0 * w + b.i0;
    const int c01 = b.j0 * w + b.i1;
    const int c10 = b.j1 * w + b.i0;
    const int c11 = b.j1 * w + b.i1;
    for (int ch = 0; ch < c; ++ch) {
      out.at(r, ch) = (1.0 - b.u) * (1.0 - b.v) * vg.at(c00, ch) +
                      b.u * (1.0 - b.v) * vg.at(c01, ch) +
                      (1.0 - b.u) * b.v * vg.at(c10, ch) +
                      b.u * b.v * vg.at(c11, ch);
    }
  }
  const bool ng = node(grid).needs_grad || node(coords).needs_grad;
  Id id = push(std::move(out), ng);
  if (ng) {
    node(id).back = [this, id, grid, coords, h, w, c, p] {
      const Mat& g = nodes_[id].grad;
      const Mat& vg2 = nodes_[grid].val;
      const Mat& vc2 = nodes_[coords].val;
      for (int r = 0; r < p; ++r) {
        const BilinearCell b = locate(vc2.at(r, 0), vc2.at(r, 1), h, w);
        const int c00 = b.j0 * w + b.i0;
        const int c01 = b.j0 * w + b.i1;
        const int c10 = b.j1 * w + b.i0;
        const int c11 = b.j1 * w + b.i1;
        if (nodes_[grid].needs_grad) {
          Mat& gg = grad_buf(grid);
          for (int ch = 0; ch < c; ++ch) {
            const double gy = g.at(r, ch);
            gg.at(c00, ch) += gy * (1.0 - b.u) * (1.0 - b.v);
            gg.at(c01, ch) += gy * b.u * (1.0 - b.v);
            gg.at(c10, ch) += gy * (1.0 - b.u) * b.v;
            gg.at(c11, ch) += gy * b.u * b.v;
          }
        }
        if (nodes_[coords].needs_grad) {
          Mat& gc = grad_buf(coords);
          double du = 0.0;
          double dv = 0.0;
          for (int ch = 0; ch < c; ++ch) {
            const double gy = g.at(r, ch);
            du += gy * ((1.0 - b.v) * (vg2.at(c01, ch) - vg2.at(c00, ch)) +
                        b.v * (vg2.at(c11, ch) - vg2.at(c10, ch)));
            dv += gy * ((1.0 - b.u) * (vg2.at(c10, ch) - vg2.at(c00, ch)) +
                        b.u * (vg2.at(c11, ch) - vg2.at(c01, ch)));
          }
          if (!b.clamp_x) gc.at(r, 0) += du;
          if (!b.clamp_y) gc.at(r, 1) += dv;
        }
      }
    };
  }
  return id;
}

}  // namespace latentplan::nnet
