#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace propfly::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class OpKind { kAdd, kSub, kMul, kMatmul, kScale, kSum, kMean, kGelu, kMse };
std::string_view op_name(OpKind kind);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  bool is_leaf = true;
};

// Handle to a dense float64 array. Copies share the underlying node, so a
// parameter held in two places accumulates into one gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;  // rank-2 only
  std::size_t cols() const;  // rank-2 only

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;   // empty when no gradient has been accumulated
  std::vector<double> grad_or_zero() const;
  void zero_grad();

  // Deep copy of the values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  const Node* id() const { return node_.get(); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_tensor(std::shared_ptr<Node> node);
};

Tensor make_tensor(std::shared_ptr<Node> node);

// Ordered record of differentiable operations. One tape is current per
// thread; operations on gradient-requiring inputs append to it, and
// backward() walks it in reverse recording order.
class Tape {
 public:
  struct Record {
    OpKind kind;
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    double scalar = 0.0;
  };

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  void clear() { records_.clear(); }
  const std::vector<Record>& records() const { return records_; }
  void push(Record record) { records_.push_back(std::move(record)); }

  static Tape& current();

 private:
  std::vector<Record> records_;
};

// Makes `tape` current for this thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suppresses recording: results of operations inside the scope never
// require grad.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Generic operator entry point. `scalar` is the factor for kScale and is
// ignored otherwise.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, double scalar = 0.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);

// Populates grad on every gradient-requiring leaf reachable from `loss`,
// then clears the current tape.
void backward(const Tensor& loss);

Tensor detach(const Tensor& x);

}  // namespace propfly::ad
