#include "propfly/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "propfly/errors.hpp"
#include "propfly/kernels.hpp"

namespace propfly::ad {

namespace {

thread_local Tape* t_current_tape = nullptr;
thread_local int t_no_grad_depth = 0;

Tape& default_tape() {
  thread_local Tape tape;
  return tape;
}

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  return node;
}

std::vector<double>& ensure_grad(Node& node) {
  if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_string(a) +
                   " and " + shape_string(b));
}

bool is_scalar(const Node& n) { return n.value.size() == 1; }

// Output shape for elementwise binaries: equal shapes, or one side scalar.
Shape elementwise_shape(OpKind kind, const Node& a, const Node& b) {
  if (a.shape == b.shape) return a.shape;
  if (is_scalar(b)) return a.shape;
  if (is_scalar(a)) return b.shape;
  shape_fail(kind, a.shape, b.shape);
}

template <class F>
std::vector<double> binary_values(const Node& a, const Node& b, std::size_t n, F f) {
  std::vector<double> out(n);
  const bool sa = a.value.size() == 1 && n != 1;
  const bool sb = b.value.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(a.value[sa ? 0 : i], b.value[sb ? 0 : i]);
  return out;
}

// Accumulates an elementwise gradient contribution into `target`, summing
// over broadcast positions when the target is a scalar that was broadcast.
void accumulate(Node& target, std::size_t n, const auto& contribution) {
  auto& g = ensure_grad(target);
  if (target.value.size() == 1 && n != 1) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += contribution(i);
    g[0] += acc;
  } else {
    for (std::size_t i = 0; i < n; ++i) g[i] += contribution(i);
  }
}

void backward_record(const Tape::Record& rec) {
  const Node& out = *rec.output;
  const auto& gy = out.grad;
  const std::size_t n = out.value.size();
  auto wants = [](const std::shared_ptr<Node>& p) { return p->requires_grad; };

  switch (rec.kind) {
    case OpKind::kAdd:
    case OpKind::kSub: {
      Node& a = *rec.inputs[0];
      Node& b = *rec.inputs[1];
      if (wants(rec.inputs[0])) accumulate(a, n, [&](std::size_t i) { return gy[i]; });
      if (wants(rec.inputs[1])) {
        const double sign = rec.kind == OpKind::kAdd ? 1.0 : -1.0;
        accumulate(b, n, [&](std::size_t i) { return sign * gy[i]; });
      }
      break;
    }
    case OpKind::kMul: {
      Node& a = *rec.inputs[0];
      Node& b = *rec.inputs[1];
      const bool sa = a.value.size() == 1 && n != 1;
      const bool sb = b.value.size() == 1 && n != 1;
      if (wants(rec.inputs[0]))
        accumulate(a, n, [&](std::size_t i) { return gy[i] * b.value[sb ? 0 : i]; });
      if (wants(rec.inputs[1]))
        accumulate(b, n, [&](std::size_t i) { return gy[i] * a.value[sa ? 0 : i]; });
      break;
    }
    case OpKind::kMatmul: {
      Node& a = *rec.inputs[0];
      Node& b = *rec.inputs[1];
      const std::size_t m = a.shape[0], k = a.shape[1], cols = b.shape[1];
      if (wants(rec.inputs[0]))
        kernels::parallel::matmul_acc_nt(gy, b.value, ensure_grad(a), m, k, cols);
      if (wants(rec.inputs[1]))
        kernels::parallel::matmul_acc_tn(a.value, gy, ensure_grad(b), m, k, cols);
      break;
    }
    case OpKind::kScale: {
      Node& a = *rec.inputs[0];
      if (wants(rec.inputs[0]))
        accumulate(a, n, [&](std::size_t i) { return rec.scalar * gy[i]; });
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      Node& a = *rec.inputs[0];
      if (!wants(rec.inputs[0])) break;
      const std::size_t m = a.value.size();
      const double g = rec.kind == OpKind::kSum ? gy[0] : gy[0] / static_cast<double>(m);
      auto& ga = ensure_grad(a);
      for (std::size_t i = 0; i < m; ++i) ga[i] += g;
      break;
    }
    case OpKind::kGelu: {
      Node& a = *rec.inputs[0];
      if (wants(rec.inputs[0])) kernels::parallel::gelu_backward(a.value, gy, ensure_grad(a));
      break;
    }
    case OpKind::kMse: {
      Node& a = *rec.inputs[0];
      Node& b = *rec.inputs[1];
      const std::size_t m = a.value.size();
      const double f = 2.0 * gy[0] / static_cast<double>(m);
      if (wants(rec.inputs[0])) {
        auto& ga = ensure_grad(a);
        for (std::size_t i = 0; i < m; ++i) ga[i] += f * (a.value[i] - b.value[i]);
      }
      if (wants(rec.inputs[1])) {
        auto& gb = ensure_grad(b);
        for (std::size_t i = 0; i < m; ++i) gb[i] -= f * (a.value[i] - b.value[i]);
      }
      break;
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kScale: return "scale";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kGelu: return "gelu";
    case OpKind::kMse: return "mse";
  }
  return "?";
}

Tensor make_tensor(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape.empty()) shape = {1};
  for (auto d : shape)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  if (ad::numel(shape) != values.size())
    throw ShapeError("tensor of shape " + shape_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  auto node = new_node(std::move(shape), std::move(values));
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on rank-" + std::to_string(rank()) + " tensor");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on rank-" + std::to_string(rank()) + " tensor");
  return node_->shape[1];
}

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::is_leaf() const { return node_->is_leaf; }

bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

std::vector<double> Tensor::grad_or_zero() const {
  if (has_grad()) return node_->grad;
  return std::vector<double>(numel(), 0.0);
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

Tape& Tape::current() { return t_current_tape ? *t_current_tape : default_tape(); }

TapeScope::TapeScope(Tape& tape) : previous_(t_current_tape) { t_current_tape = &tape; }
TapeScope::~TapeScope() { t_current_tape = previous_; }

NoGradGuard::NoGradGuard() { ++t_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --t_no_grad_depth; }

bool grad_enabled() { return t_no_grad_depth == 0; }

Tensor apply(OpKind kind, std::span<const Tensor> inputs, double scalar) {
  const bool binary = kind == OpKind::kAdd || kind == OpKind::kSub || kind == OpKind::kMul ||
                      kind == OpKind::kMatmul || kind == OpKind::kMse;
  const std::size_t arity = binary ? 2 : 1;
  if (inputs.size() != arity)
    throw ContractError(std::string(op_name(kind)) + ": expected " + std::to_string(arity) +
                        " inputs, got " + std::to_string(inputs.size()));
  for (const auto& in : inputs)
    if (!in.defined()) throw ContractError(std::string(op_name(kind)) + ": undefined input");

  const Node& a = *inputs[0].node();
  Shape out_shape;
  std::vector<double> out;

  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul: {
      const Node& b = *inputs[1].node();
      out_shape = elementwise_shape(kind, a, b);
      const std::size_t n = ad::numel(out_shape);
      if (kind == OpKind::kAdd) out = binary_values(a, b, n, [](double x, double y) { return x + y; });
      if (kind == OpKind::kSub) out = binary_values(a, b, n, [](double x, double y) { return x - y; });
      if (kind == OpKind::kMul) out = binary_values(a, b, n, [](double x, double y) { return x * y; });
      break;
    }
    case OpKind::kMatmul: {
      const Node& b = *inputs[1].node();
      if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
        shape_fail(kind, a.shape, b.shape);
      out_shape = {a.shape[0], b.shape[1]};
      out.resize(a.shape[0] * b.shape[1]);
      kernels::parallel::matmul(a.value, b.value, out, a.shape[0], a.shape[1], b.shape[1]);
      break;
    }
    case OpKind::kScale: {
      out_shape = a.shape;
      out.resize(a.value.size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = scalar * a.value[i];
      break;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      double acc = 0.0;
      for (double v : a.value) acc += v;
      if (kind == OpKind::kMean) acc /= static_cast<double>(a.value.size());
      out_shape = {1};
      out = {acc};
      break;
    }
    case OpKind::kGelu: {
      out_shape = a.shape;
      out.resize(a.value.size());
      kernels::parallel::gelu(a.value, out);
      break;
    }
    case OpKind::kMse: {
      const Node& b = *inputs[1].node();
      if (a.shape != b.shape) shape_fail(kind, a.shape, b.shape);
      double acc = 0.0;
      for (std::size_t i = 0; i < a.value.size(); ++i) {
        const double d = a.value[i] - b.value[i];
        acc += d * d;
      }
      out_shape = {1};
      out = {acc / static_cast<double>(a.value.size())};
      break;
    }
  }

  auto node = new_node(std::move(out_shape), std::move(out));
  bool track = false;
  if (grad_enabled())
    for (const auto& in : inputs) track = track || in.requires_grad();
  if (track) {
    node->requires_grad = true;
    node->is_leaf = false;
    Tape::Record rec{kind, {}, node, scalar};
    for (const auto& in : inputs) rec.inputs.push_back(in.node());
    Tape::current().push(std::move(rec));
  }
  return make_tensor(std::move(node));
}

Tensor add(const Tensor& a, const Tensor& b) { const Tensor in[] = {a, b}; return apply(OpKind::kAdd, in); }
Tensor sub(const Tensor& a, const Tensor& b) { const Tensor in[] = {a, b}; return apply(OpKind::kSub, in); }
Tensor mul(const Tensor& a, const Tensor& b) { const Tensor in[] = {a, b}; return apply(OpKind::kMul, in); }
Tensor matmul(const Tensor& a, const Tensor& b) { const Tensor in[] = {a, b}; return apply(OpKind::kMatmul, in); }
Tensor scale(const Tensor& a, double factor) { const Tensor in[] = {a}; return apply(OpKind::kScale, in, factor); }
Tensor sum(const Tensor& a) { const Tensor in[] = {a}; return apply(OpKind::kSum, in); }
Tensor mean(const Tensor& a) { const Tensor in[] = {a}; return apply(OpKind::kMean, in); }
Tensor gelu(const Tensor& a) { const Tensor in[] = {a}; return apply(OpKind::kGelu, in); }
Tensor mse(const Tensor& a, const Tensor& b) { const Tensor in[] = {a, b}; return apply(OpKind::kMse, in); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  if (!loss.requires_grad())
    throw ContractError("backward: loss does not depend on any gradient-requiring tensor");

  Tape& tape = Tape::current();
  Node& root = *loss.node();
  ensure_grad(root)[0] += 1.0;

  const auto& recs = tape.records();
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    backward_record(*it);
  }
  // Release intermediate buffers so a later backward on the same graph
  // cannot double count; leaves keep their accumulated gradients.
  for (const auto& rec : recs) rec.output->grad.clear();
  tape.clear();
}

Tensor detach(const Tensor& x) {
  if (!x.defined()) throw ContractError("detach: undefined tensor");
  return Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), false);
}

}  // namespace propfly::ad
