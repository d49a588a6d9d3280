#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stairpool/tensor.hpp"

namespace stairpool {

class Tape;
class GradientMap;
struct Var;
GradientMap backward(Tape& tape, Var loss);

// Handle to a value recorded on a tape.
struct Var {
  std::size_t id = 0;
  const Tape* tape = nullptr;
};

// Gradients produced by one backward pass, keyed by tape slot.
class GradientMap {
 public:
  const std::vector<double>* find(Var v) const;
  const std::vector<double>& at(Var v) const;
  bool contains(Var v) const { return find(v) != nullptr; }
  // Gradient of a parameter watched on the tape, or nullptr.
  const std::vector<double>* of(const Parameter& p) const;

 private:
  friend GradientMap backward(Tape& tape, Var loss);
  const Tape* tape_ = nullptr;
  std::unordered_map<std::size_t, std::vector<double>> grads_;
  std::unordered_map<const Parameter*, std::size_t> params_;
};

// Eager append-only operation log. Each recorded node keeps the closure that
// applies its backward rule; closures capture whatever forward context they
// need. Inference tapes never record nodes and never track gradients.
class Tape {
 public:
  enum class Mode { Train, Inference };

  using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;

  explicit Tape(Mode mode = Mode::Train) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const noexcept { return mode_; }

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad);
  // Leaf holding a copy of a parameter's value. On a training tape it
  // requires a gradient, retrievable with GradientMap::of(param). Watching
  // the same parameter twice returns the same slot.
  Var watch(const Parameter& param);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Appends the output of an operation. The node is recorded only when some
  // input requires a gradient.
  Var record(std::string_view op, std::initializer_list<Var> inputs, Tensor out, BackwardFn fn);
  Var record(std::string_view op, const std::vector<Var>& inputs, Tensor out, BackwardFn fn);

  // Used by backward rules: the gradient buffer of an input slot, or nullptr
  // if that input does not require a gradient.
  double* grad_target(std::size_t slot);

  std::size_t num_values() const noexcept { return slots_.size(); }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }

  friend GradientMap backward(Tape& tape, Var loss);

 private:
  struct Slot {
    Tensor value;
    bool requires_grad = false;
    std::vector<double> grad;
  };
  struct Node {
    std::string_view op;
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn fn;
  };

  Var push(Tensor value, bool requires_grad);
  void check(Var v) const;

  Mode mode_;
  bool consumed_ = false;
  std::deque<Slot> slots_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> watched_;
};

// Reverse pass from a scalar loss. Returns the gradient of every leaf that
// requires one and is reachable from the loss.
GradientMap backward(Tape& tape, Var loss);

}  // namespace stairpool
