#include "latentscale/autodiff.hpp"

#include <cstring>
#include <stdexcept>

namespace latentscale::num {

Parameter& ParameterSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(value.shape(), 0.0);
  p->value = std::move(value);
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return *params_[it->second];
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

void ParameterSet::set_trainable(bool trainable) {
  for (auto& p : params_) p->trainable = trainable;
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& p : params_) {
    feed(p->name.data(), p->name.size());
    feed(p->value.data(), p->value.size() * sizeof(double));
  }
  return h;
}

const Tensor& Var::value() const { return tape->value(index); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.owned = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.op = "parameter";
  n.ref = &p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_ && p.trainable;
  Var v = push(std::move(n));
  param_nodes_[&p] = v.index;
  return v;
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> parents, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericalError(std::string("non-finite output from op '") + op + "' " + value.shape_string());
  }
  Node n;
  n.op = op;
  n.owned = std::move(value);
  if (grad_enabled_) {
    for (const Var& p : parents) {
      if (p.tape != this) throw std::invalid_argument(std::string("op '") + op + "' mixes tapes");
      n.requires_grad = n.requires_grad || nodes_[p.index].requires_grad;
    }
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Tensor& Tape::value(std::uint32_t i) const {
  const Node& n = nodes_[i];
  return n.ref ? *n.ref : n.owned;
}

Tensor& Tape::grad(std::uint32_t i) {
  Node& n = nodes_[i];
  if (n.grad.empty()) n.grad = Tensor(value(i).shape(), 0.0);
  return n.grad;
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[v.index];
  if (n.grad.empty()) throw std::logic_error("no gradient recorded for node");
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward: root belongs to another tape");
  if (value(root.index).size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + value(root.index).shape_string());
  }
  if (!nodes_[root.index].requires_grad) return;
  grad(root.index)[0] += 1.0;
  for (std::uint32_t i = root.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param && n.param->trainable) {
      Tensor& acc = n.param->grad;
      if (acc.empty()) acc = Tensor(n.param->value.shape(), 0.0);
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += n.grad[k];
    }
  }
}

}  // namespace latentscale::num
