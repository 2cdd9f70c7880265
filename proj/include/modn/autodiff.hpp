#pragma once

// Reverse-mode automatic differentiation over dense row-major batches.
//
// Every quantity is an Eigen::MatrixXd whose rows are batch items; a single
// vector is a 1 x n matrix. Operations are recorded on a Tape in execution
// order and replayed backwards by Tape::backward.

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace modn {

using Tensor = Eigen::MatrixXd;

/// Named trainable tensors, each with a gradient accumulator of the same shape.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  /// Adds a parameter with a zeroed accumulator. Throws SchemaError on duplicates.
  Entry& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void zero_grad();
  /// Removes every entry whose name starts with prefix.
  void erase_prefix(const std::string& prefix);

  std::uint64_t rng_seed = 0;

 private:
  std::map<std::string, Entry> entries_;
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }
  const Tensor& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf with no gradient flowing anywhere.
  Var constant(Tensor value);
  /// Leaf bound to a parameter. A parameter used several times maps to a
  /// single node.
  Var param(ParamStore::Entry& entry);
  Var param(ParamStore& store, const std::string& name) { return param(store.at(name)); }

  /// Records a computed node; backward receives (tape, own index) and must
  /// push grad(self) into its inputs with add_grad.
  Var record(Tensor value, BackwardFn backward);

  const Tensor& value(std::size_t i) const { return nodes_[i].value; }
  const Tensor& grad(std::size_t i) const { return nodes_[i].grad; }
  void add_grad(std::size_t i, const Tensor& g) { nodes_[i].grad += g; }
  template <typename Expr>
  void add_grad_expr(std::size_t i, const Expr& g) {
    nodes_[i].grad += g;
  }

  /// Propagates d(loss)/d(node) for every node and adds the parameter
  /// gradients into their ParamStore accumulators. loss must be a 1x1 node
  /// of this tape.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    ParamStore::Entry* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const ParamStore::Entry*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(index_); }

inline void backward(Tape& tape, Var loss) { tape.backward(loss); }

// Recorded operations. All inputs must live on the same tape.

/// x * W^T + b, with x (n x in), W (out x in), b (1 x out) broadcast over rows.
Var linear(Var x, Var weight, Var bias);
Var add(Var a, Var b);
Var scale(Var a, double factor);
/// Horizontal concatenation [a | b]; a and b must have equal row counts.
Var concat_cols(Var a, Var b);
/// Vertical stack of 1-row (or wider) blocks with equal column counts.
Var stack_rows(const std::vector<Var>& parts);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var sum(Var a);
Var square_sum(Var a);
/// Sum of squared differences to a constant target.
Var squared_error(Var prediction, const Tensor& target);
/// Sum over entries of binary cross-entropy computed from logits, with
/// constant labels in {0, 1}. Stable for large |logit|.
Var bce_with_logits(Var logits, const Tensor& labels);
/// Weighted sum of BCE terms; weights has the shape of logits.
Var bce_with_logits(Var logits, const Tensor& labels, const Tensor& weights);

}  // namespace modn
