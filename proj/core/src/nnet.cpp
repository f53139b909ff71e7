#include "latentplan/nnet.hpp"

#include <algorithm>
#include <cmath>

namespace latentplan::nnet {

size_t DenseNet::param_count() const {
  if (sizes.size() < 2) throw ShapeError("DenseNet: need at least two sizes");
  size_t n = 0;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    n += static_cast<size_t>(sizes[l + 1]) * sizes[l] + sizes[l + 1];
  }
  return n;
}

Tape::Id DenseNet::apply(Tape& t, Tape::Id x, size_t offset) const {
  if (sizes.size() < 2) throw ShapeError("DenseNet: need at least two sizes");
  size_t off = offset;
  Tape::Id h = x;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l];
    const int out = sizes[l + 1];
    const Tape::Id w = t.param(off, out, in);
    off += static_cast<size_t>(out) * in;
    const Tape::Id b = t.param(off, 1, out);
    off += static_cast<size_t>(out);
    h = t.linear(h, w, b);
    if (l + 2 < sizes.size()) {
      switch (hidden_act) {
        case Activation::kTanh: h = t.tanh_(h); break;
        case Activation::kRelu: h = t.relu(h); break;
        case Activation::kIdentity: break;
      }
    }
  }
  return h;
}

void DenseNet::init_params(std::span<double> dst, Rng& rng) const {
  if (dst.size() != param_count()) {
    throw ShapeError("DenseNet: init buffer size mismatch");
  }
  size_t off = 0;
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l];
    const int out = sizes[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    for (int k = 0; k < out * in; ++k) {
      dst[off++] = rng.uniform(-bound, bound);
    }
    for (int k = 0; k < out; ++k) dst[off++] = 0.0;
  }
}

size_t DenseNet::last_layer_offset() const {
  return param_count() - last_layer_count();
}

size_t DenseNet::last_layer_count() const {
  const size_t n = sizes.size();
  if (n < 2) throw ShapeError("DenseNet: need at least two sizes");
  return static_cast<size_t>(sizes[n - 1]) * sizes[n - 2] + sizes[n - 1];
}

std::vector<Mat> unflatten(const DenseNet& net, std::span<const double> params) {
  if (params.size() != net.param_count()) {
    throw ShapeError("unflatten: parameter count mismatch");
  }
  std::vector<Mat> out;
  size_t off = 0;
  for (size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    const int in = net.sizes[l];
    const int rows = net.sizes[l + 1];
    Mat w(rows, in);
    std::copy(params.begin() + off, params.begin() + off + w.size(),
              w.data.begin());
    off += w.size();
    Mat b(1, rows);
    std::copy(params.begin() + off, params.begin() + off + b.size(),
              b.data.begin());
    off += b.size();
    out.push_back(std::move(w));
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<double> flatten(const DenseNet& net, std::span<const Mat> layers) {
  if (layers.size() != 2 * (net.sizes.size() - 1)) {
    throw ShapeError("flatten: layer count mismatch");
  }
  std::vector<double> out;
  out.reserve(net.param_count());
  for (size_t l = 0; l + 1 < net.sizes.size(); ++l) {
    const Mat& w = layers[2 * l];
    const Mat& b = layers[2 * l + 1];
    if (w.rows != net.sizes[l + 1] || w.cols != net.sizes[l] || b.rows != 1 ||
        b.cols != net.sizes[l + 1]) {
      throw ShapeError("flatten: layer shape mismatch");
    }
    out.insert(out.end(), w.data.begin(), w.data.end());
    out.insert(out.end(), b.data.begin(), b.data.end());
  }
  return out;
}

// -- forward/backward surface -- //

std::span<const double> GradTape::output() const {
  const Mat& v = tape_->val(output_id_);
  return {v.data.data(), v.data.size()};
}

GradTape forward(const DenseNet& net, std::span<const double> params,
                 std::span<const double> input) {
  if (params.size() != net.param_count()) {
    throw ShapeError("forward: parameter count mismatch");
  }
  if (input.size() != static_cast<size_t>(net.input_dim())) {
    throw ShapeError("forward: input size mismatch");
  }
  GradTape g;
  g.tape_ = std::make_unique<Tape>(params);
  g.param_count_ = params.size();
  g.input_id_ = g.tape_->input(Mat::row_vector(input));
  g.output_id_ = net.apply(*g.tape_, g.input_id_, 0);
  return g;
}

std::pair<std::vector<double>, std::vector<double>> backward(
    GradTape& tape, std::span<const double> output_grad) {
  if (tape.used_) {
    throw UsageError("backward: tape already consumed");
  }
  tape.used_ = true;
  const Mat& out = tape.tape_->val(tape.output_id_);
  if (output_grad.size() != out.data.size()) {
    throw ShapeError("backward: output gradient size mismatch");
  }
  // Contract the output against the seed to get a scalar root.
  Tape::Id seed = tape.tape_->constant(Mat::row_vector(output_grad));
  Tape::Id scalar = tape.tape_->sum(tape.tape_->mul(tape.output_id_, seed));
  tape.tape_->backward(scalar);

  std::vector<double> param_grads(tape.param_count_, 0.0);
  tape.tape_->accumulate_param_grads(param_grads);
  const Mat& gin = tape.tape_->grad(tape.input_id_);
  return {std::move(param_grads), gin.data};
}

// -- optimizers -- //

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.kind = OptimizerKind::kSgd;
  s.learning_rate = lr;
  return s;
}

OptimizerState OptimizerState::adam(double lr, size_t param_count) {
  OptimizerState s;
  s.kind = OptimizerKind::kAdam;
  s.learning_rate = lr;
  s.m.assign(param_count, 0.0);
  s.v.assign(param_count, 0.0);
  return s;
}

void apply_step(OptimizerState& opt, std::span<double> params,
                std::span<const double> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("apply_step: gradient size mismatch");
  }
  for (const double g : grads) {
    if (!std::isfinite(g)) {
      throw NumericsError("apply_step: non-finite gradient, step aborted");
    }
  }
  switch (opt.kind) {
    case OptimizerKind::kSgd:
      ++opt.step_count;
      for (size_t i = 0; i < params.size(); ++i) {
        params[i] -= opt.learning_rate * grads[i];
      }
      break;
    case OptimizerKind::kAdam: {
      if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
        throw ShapeError("apply_step: moment buffers do not match parameters");
      }
      ++opt.step_count;
      const double b1t = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step_count));
      const double b2t = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step_count));
      for (size_t i = 0; i < params.size(); ++i) {
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * grads[i];
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * grads[i] * grads[i];
        const double mhat = opt.m[i] / b1t;
        const double vhat = opt.v[i] / b2t;
        params[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.eps);
      }
      break;
    }
  }
}

// -- parameter layout -- //

size_t ParamLayout::add(std::string name, size_t count) {
  for (const Entry& e : entries_) {
    if (e.name == name) {
      throw UsageError("ParamLayout: duplicate group '" + name + "'");
    }
  }
  const size_t offset = total_;
  entries_.push_back(Entry{std::move(name), offset, count});
  total_ += count;
  return offset;
}

const ParamLayout::Entry& ParamLayout::find(std::string_view name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e;
  }
  throw UsageError("ParamLayout: unknown group '" + std::string(name) + "'");
}

}  // namespace latentplan::nnet
