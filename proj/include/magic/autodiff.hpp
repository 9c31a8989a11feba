#pragma once

// Minimal tape-based reverse-mode differentiation over dense matrices.
//
// Values are Eigen matrices; a batch of vectors is stored column-wise
// (dimension x batch). A Tape records every operation of one forward pass and
// Tape::backward() replays them in reverse. Parameters live outside the tape
// and receive accumulated gradients.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace magic::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix v);
  /// Constant that aliases external storage; `v` must outlive the tape.
  Var constant_ref(const Matrix& v);
  /// Leaf whose gradient is accumulated into `p.grad` on backward().
  Var param(Parameter& p);
  /// Parameter used read-only: gradients flow through it but never into it.
  Var frozen(const Parameter& p) { return constant_ref(p.value); }

  /// Reverse pass from a 1x1 node. Parameter gradients are accumulated
  /// (callers zero them between steps).
  void backward(Var loss);

  // Node plumbing used by the op implementations.
  Var push(Matrix value, bool requires_grad, Backward backward);
  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.ref ? *n.ref : n.value;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  Matrix& grad(int id);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    bool grad_ready = false;
    Parameter* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }

// Linear algebra
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// a (r x c) + b (r x 1) broadcast over columns.
Var add_bias(Var a, Var b);
/// a (r x c) scaled row-wise by v (r x 1).
Var mul_colvec(Var a, Var v);
/// a (r x c) scaled column-wise by w (1 x c).
Var mul_rowvec(Var a, Var w);

// Elementwise nonlinearities
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var reciprocal(Var a);
Var sqrt(Var a);
Var square(Var a);
Var abs(Var a);
/// log(sigmoid(a)), stable for large |a|.
Var log_sigmoid(Var a);

// Reductions
Var sum(Var a);
Var mean(Var a);
/// Column sums as a 1 x c row.
Var col_sums(Var a);
/// Row sums as an r x 1 column.
Var row_sums(Var a);

// Normalisation over each column
Var softmax_cols(Var a);
Var log_softmax_cols(Var a);

// Shape manipulation
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index n);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index n);
/// Columns of `a` by index; a negative index yields a zero column.
Var gather_cols(Var a, const std::vector<int>& index);
/// out(i, j) = a at column-major offset src[i + j * rows]; negative -> 0.
Var gather(Var a, const std::vector<long>& src, Eigen::Index rows, Eigen::Index cols);
/// 1 x c row with out(0, j) = a(index[j], j); negative index -> 0.
Var pick(Var a, const std::vector<int>& index);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return matmul(a, b); }

}  // namespace magic::ad
