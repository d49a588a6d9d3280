#include "stairpool/tape.hpp"

#include "stairpool/error.hpp"

namespace stairpool {

const std::vector<double>* GradientMap::find(Var v) const {
  if (v.tape != tape_) throw Error(Errc::TapeMismatch, "variable belongs to another tape");
  auto it = grads_.find(v.id);
  return it == grads_.end() ? nullptr : &it->second;
}

const std::vector<double>& GradientMap::at(Var v) const {
  const auto* g = find(v);
  if (!g) throw Error(Errc::MissingGrad, "no gradient recorded for slot " + std::to_string(v.id));
  return *g;
}

const std::vector<double>* GradientMap::of(const Parameter& p) const {
  auto it = params_.find(&p);
  if (it == params_.end()) return nullptr;
  auto g = grads_.find(it->second);
  return g == grads_.end() ? nullptr : &g->second;
}

Var Tape::push(Tensor value, bool requires_grad) {
  slots_.push_back(Slot{std::move(value), requires_grad, {}});
  return Var{slots_.size() - 1, this};
}

void Tape::check(Var v) const {
  if (v.tape != this || v.id >= slots_.size()) {
    throw Error(Errc::TapeMismatch, "variable was not recorded on this tape");
  }
}

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::input(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad && mode_ == Mode::Train);
}

Var Tape::watch(const Parameter& param) {
  if (auto it = watched_.find(&param); it != watched_.end()) return Var{it->second, this};
  // The slot holds a copy so that later optimizer steps cannot alter values
  // saved for this tape's backward pass.
  Tensor copy(param.value.shape(), param.value.storage());
  Var v = push(std::move(copy), mode_ == Mode::Train);
  watched_.emplace(&param, v.id);
  return v;
}

const Tensor& Tape::value(Var v) const {
  check(v);
  return slots_[v.id].value;
}

bool Tape::requires_grad(Var v) const {
  check(v);
  return slots_[v.id].requires_grad;
}

Var Tape::record(std::string_view op, std::initializer_list<Var> inputs, Tensor out, BackwardFn fn) {
  return record(op, std::vector<Var>(inputs), std::move(out), std::move(fn));
}

Var Tape::record(std::string_view op, const std::vector<Var>& inputs, Tensor out, BackwardFn fn) {
  bool any = false;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const Var& v : inputs) {
    check(v);
    any = any || slots_[v.id].requires_grad;
    ids.push_back(v.id);
  }
  if (consumed_) throw Error(Errc::TapeMismatch, "tape already consumed by a backward pass");
  Var result = push(std::move(out), any);
  if (any) nodes_.push_back(Node{op, std::move(ids), result.id, std::move(fn)});
  return result;
}

double* Tape::grad_target(std::size_t slot) {
  Slot& s = slots_.at(slot);
  if (!s.requires_grad) return nullptr;
  if (s.grad.empty()) s.grad.assign(s.value.storage().size(), 0.0);
  return s.grad.data();
}

GradientMap backward(Tape& tape, Var loss) {
  tape.check(loss);
  if (tape.consumed_) throw Error(Errc::TapeMismatch, "backward already ran on this tape");
  Tape::Slot& root = tape.slots_[loss.id];
  if (root.value.size() != 1) {
    throw Error(Errc::NotScalar, "loss has shape " + shape_str(root.value.shape()));
  }
  tape.consumed_ = true;

  GradientMap result;
  result.tape_ = &tape;
  for (auto [param, slot] : tape.watched_) result.params_.emplace(param, slot);
  if (!root.requires_grad) return result;
  root.grad.assign(1, 1.0);

  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    // Nodes past the loss, or not on a path to it, hold no gradient.
    if (it->output > loss.id) continue;
    Tape::Slot& out = tape.slots_[it->output];
    if (out.grad.empty()) continue;
    it->fn(tape, out.grad);
    // Intermediate gradients are dead once propagated.
    std::vector<double>().swap(out.grad);
  }

  for (std::size_t id = 0; id < tape.slots_.size(); ++id) {
    Tape::Slot& s = tape.slots_[id];
    if (!s.requires_grad || s.grad.empty()) continue;
    result.grads_.emplace(id, std::move(s.grad));
  }
  return result;
}

}  // namespace stairpool
