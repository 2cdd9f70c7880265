#include "modn/autodiff.hpp"

#include <cmath>

#include "modn/activations.hpp"
#include "modn/errors.hpp"

namespace modn {

namespace {

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw ContractError(std::string(op) + ": operands belong to different tapes");
  }
  return *a.tape();
}

Tape& tape_of(Var a, const char* op) {
  if (a.tape() == nullptr) throw ContractError(std::string(op) + ": detached variable");
  return *a.tape();
}

}  // namespace

ParamStore::Entry& ParamStore::add(const std::string& name, Tensor value) {
  if (entries_.count(name) != 0) throw SchemaError("duplicate parameter '" + name + "'");
  Tensor grad = Tensor::Zero(value.rows(), value.cols());
  return entries_.emplace(name, Entry{std::move(value), std::move(grad)}).first->second;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grad() {
  for (auto& [name, entry] : entries_) entry.grad.setZero();
}

void ParamStore::erase_prefix(const std::string& prefix) {
  for (auto it = entries_.lower_bound(prefix); it != entries_.end() && it->first.starts_with(prefix);) {
    it = entries_.erase(it);
  }
}

Var Tape::constant(Tensor value) { return record(std::move(value), nullptr); }

Var Tape::param(ParamStore::Entry& entry) {
  if (auto it = param_nodes_.find(&entry); it != param_nodes_.end()) return Var(this, it->second);
  Var v = record(entry.value, nullptr);
  nodes_[v.index()].param = &entry;
  param_nodes_.emplace(&entry, v.index());
  return v;
}

Var Tape::record(Tensor value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Tensor(), std::move(backward), nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this || loss.index() >= nodes_.size()) {
    throw ContractError("backward: loss node is not on this tape");
  }
  const Tensor& lv = nodes_[loss.index()].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(lv));
  }
  for (std::size_t i = 0; i <= loss.index(); ++i) {
    nodes_[i].grad.setZero(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  nodes_[loss.index()].grad(0, 0) = 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.backward) node.backward(*this, i);
  }
  for (std::size_t i = 0; i <= loss.index(); ++i) {
    if (nodes_[i].param != nullptr) nodes_[i].param->grad += nodes_[i].grad;
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = same_tape(x, weight, "linear");
  same_tape(x, bias, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (xv.cols() != wv.cols()) {
    throw ShapeError("linear: input " + shape_str(xv) + " incompatible with weight " + shape_str(wv));
  }
  if (bv.rows() != 1 || bv.cols() != wv.rows()) {
    throw ShapeError("linear: bias " + shape_str(bv) + " incompatible with weight " + shape_str(wv));
  }
  Tensor out = xv * wv.transpose();
  out.rowwise() += bv.row(0);
  const std::size_t xi = x.index(), wi = weight.index(), bi = bias.index();
  return tape.record(std::move(out), [xi, wi, bi](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.add_grad_expr(xi, g * t.value(wi));
    t.add_grad_expr(wi, g.transpose() * t.value(xi));
    t.add_grad_expr(bi, g.colwise().sum());
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
  const std::size_t ai = a.index(), bi = b.index();
  return tape.record(a.value() + b.value(), [ai, bi](Tape& t, std::size_t self) {
    t.add_grad(ai, t.grad(self));
    t.add_grad(bi, t.grad(self));
  });
}

Var scale(Var a, double factor) {
  Tape& tape = tape_of(a, "scale");
  const std::size_t ai = a.index();
  return tape.record(a.value() * factor, [ai, factor](Tape& t, std::size_t self) {
    t.add_grad_expr(ai, t.grad(self) * factor);
  });
}

Var concat_cols(Var a, Var b) {
  Tape& tape = same_tape(a, b, "concat_cols");
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
  Tensor out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const std::size_t ai = a.index(), bi = b.index();
  const Eigen::Index ac = a.cols(), bc = b.cols();
  return tape.record(std::move(out), [ai, bi, ac, bc](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    t.add_grad_expr(ai, g.leftCols(ac));
    t.add_grad_expr(bi, g.rightCols(bc));
  });
}

Var stack_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("stack_rows: no inputs");
  Tape& tape = tape_of(parts.front(), "stack_rows");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.tape() != &tape) throw ContractError("stack_rows: operands belong to different tapes");
    if (p.cols() != cols) throw ShapeError("stack_rows: column counts differ");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  layout.reserve(parts.size());
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.index(), p.rows());
    at += p.rows();
  }
  return tape.record(std::move(out), [layout = std::move(layout)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Eigen::Index offset = 0;
    for (const auto& [index, n] : layout) {
      t.add_grad_expr(index, g.middleRows(offset, n));
      offset += n;
    }
  });
}

Var tanh(Var a) {
  Tape& tape = tape_of(a, "tanh");
  const std::size_t ai = a.index();
  return tape.record(a.value().array().tanh().matrix(), [ai](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    t.add_grad_expr(ai, (t.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(Var a) {
  Tape& tape = tape_of(a, "relu");
  const std::size_t ai = a.index();
  return tape.record(a.value().cwiseMax(0.0), [ai](Tape& t, std::size_t self) {
    const Tensor& x = t.value(ai);
    t.add_grad_expr(ai, (t.grad(self).array() * (x.array() > 0.0).cast<double>()).matrix());
  });
}

Var sigmoid(Var a) {
  Tape& tape = tape_of(a, "sigmoid");
  const std::size_t ai = a.index();
  Tensor out = a.value().unaryExpr([](double z) { return stable_sigmoid(z); });
  return tape.record(std::move(out), [ai](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    t.add_grad_expr(ai, (t.grad(self).array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var sum(Var a) {
  Tape& tape = tape_of(a, "sum");
  const std::size_t ai = a.index();
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  return tape.record(std::move(out), [ai](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    const Tensor& x = t.value(ai);
    t.add_grad_expr(ai, Tensor::Constant(x.rows(), x.cols(), g));
  });
}

Var square_sum(Var a) {
  Tape& tape = tape_of(a, "square_sum");
  const std::size_t ai = a.index();
  Tensor out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return tape.record(std::move(out), [ai](Tape& t, std::size_t self) {
    t.add_grad_expr(ai, t.value(ai) * (2.0 * t.grad(self)(0, 0)));
  });
}

Var squared_error(Var prediction, const Tensor& target) {
  Tape& tape = tape_of(prediction, "squared_error");
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
    throw ShapeError("squared_error: prediction " + shape_str(prediction.value()) + " vs target " +
                     shape_str(target));
  }
  const std::size_t pi = prediction.index();
  Tensor out(1, 1);
  out(0, 0) = (prediction.value() - target).squaredNorm();
  return tape.record(std::move(out), [pi, target](Tape& t, std::size_t self) {
    t.add_grad_expr(pi, (t.value(pi) - target) * (2.0 * t.grad(self)(0, 0)));
  });
}

Var bce_with_logits(Var logits, const Tensor& labels) {
  return bce_with_logits(logits, labels, Tensor::Ones(labels.rows(), labels.cols()));
}

Var bce_with_logits(Var logits, const Tensor& labels, const Tensor& weights) {
  Tape& tape = tape_of(logits, "bce_with_logits");
  const Tensor& z = logits.value();
  if (z.rows() != labels.rows() || z.cols() != labels.cols() || weights.rows() != z.rows() ||
      weights.cols() != z.cols()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(z) + ", labels " + shape_str(labels) +
                     ", weights " + shape_str(weights));
  }
  double loss = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      loss += weights(r, c) * bce_from_logit(z(r, c), labels(r, c));
    }
  }
  Tensor out(1, 1);
  out(0, 0) = loss;
  const std::size_t zi = logits.index();
  return tape.record(std::move(out), [zi, labels, weights](Tape& t, std::size_t self) {
    const Tensor& zv = t.value(zi);
    const Tensor p = zv.unaryExpr([](double v) { return stable_sigmoid(v); });
    t.add_grad_expr(zi, ((p - labels).array() * weights.array()).matrix() * t.grad(self)(0, 0));
  });
}

}  // namespace modn
