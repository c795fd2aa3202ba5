#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "latentscale/tensor.hpp"

namespace latentscale::num {

/// Named trainable array. `grad` accumulates across backward passes until
/// zeroed by the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  void zero_grad() { grad = Tensor(value.shape(), 0.0); }
};

/// Owning, ordered collection of parameters. Order is the checkpoint order.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }
  std::size_t element_count() const;

  void zero_grad();
  void set_trainable(bool trainable);
  /// FNV-1a over names and raw values; used for frozen-parameter checks.
  std::uint64_t checksum() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode autodiff tape. Nodes are appended in evaluation order, so the
/// node list is always a valid topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (read back with grad()).
  Var variable(Tensor value);
  /// Leaf bound to a parameter; one node per parameter per tape. Gradients
  /// are added into `p.grad` by backward() when `p.trainable`.
  Var parameter(Parameter& p);

  /// Appends an op result. `fn` is dropped when no parent needs a gradient.
  Var record(const char* op, Tensor value, std::span<const Var> parents, BackwardFn fn);
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
  }

  const Tensor& value(std::uint32_t i) const;
  bool requires_grad(std::uint32_t i) const { return nodes_[i].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.index); }
  /// Gradient accumulator for node i, allocated on first use.
  Tensor& grad(std::uint32_t i);
  const Tensor& grad(Var v) const;
  bool has_grad(std::uint32_t i) const { return !nodes_[i].grad.empty(); }

  /// Seeds d(root)/d(root) = 1 and propagates to every node that requires a
  /// gradient. Throws if root is not a single-element tensor.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Tensor owned;
    const Tensor* ref = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

}  // namespace latentscale::num
