#include "magic/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace magic::ad {

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Matrix v) { return push(std::move(v), false, nullptr); }

Var Tape::constant_ref(const Matrix& v) {
  Node n;
  n.ref = &v;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Parameter& p) {
  Node n;
  n.ref = &p.value;
  n.requires_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_ready) {
    const Matrix& v = n.ref ? *n.ref : n.value;
    n.grad.setZero(v.rows(), v.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("Tape::backward: foreign variable");
  if (loss.rows() != 1 || loss.cols() != 1) throw std::invalid_argument("Tape::backward: loss must be 1x1");
  if (!requires_grad(loss.id())) return;
  grad(loss.id()).setOnes();
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || !n.grad_ready) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param) n.param->grad += n.grad;
  }
}

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("autodiff: uninitialised variable");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: variables on different tapes");
  return tape_of(a);
}

bool rg(Var a) { return a.tape()->requires_grad(a.id()); }

void check_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
}

// Elementwise unary op with derivative expressed through input x, output y.
template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  Matrix y = a.value().unaryExpr(f);
  const int ia = a.id();
  return t.push(std::move(y), rg(a), [ia, dfdx](Tape& t, int self) {
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (Eigen::Index k = 0; k < x.size(); ++k) ga.data()[k] += g.data()[k] * dfdx(x.data()[k], y.data()[k]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: matmul inner dimension mismatch");
  Matrix y = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(y), rg(a) || rg(b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().transpose(), rg(a),
                [ia](Tape& t, int self) { t.grad(ia) += t.grad(self).transpose(); });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() + b.value(), rg(a) || rg(b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += g;
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value() - b.value(), rg(a) || rg(b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) -= g;
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return t.push(a.value().cwiseProduct(b.value()), rg(a) || rg(b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g.cwiseProduct(t.value(ib));
    if (t.requires_grad(ib)) t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value() * s, rg(a), [ia, s](Tape& t, int self) { t.grad(ia) += s * t.grad(self); });
}

Var add_scalar(Var a, double s) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push((a.value().array() + s).matrix(), rg(a),
                [ia](Tape& t, int self) { t.grad(ia) += t.grad(self); });
}

Var add_bias(Var a, Var b) {
  Tape& t = tape_of(a, b);
  if (b.cols() != 1 || b.rows() != a.rows()) throw std::invalid_argument("autodiff: add_bias shape mismatch");
  Matrix y = a.value();
  y.colwise() += b.value().col(0);
  const int ia = a.id(), ib = b.id();
  return t.push(std::move(y), rg(a) || rg(b), [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += g.rowwise().sum();
  });
}

Var mul_colvec(Var a, Var v) {
  Tape& t = tape_of(a, v);
  if (v.cols() != 1 || v.rows() != a.rows()) throw std::invalid_argument("autodiff: mul_colvec shape mismatch");
  Matrix y = a.value().array().colwise() * v.value().col(0).array();
  const int ia = a.id(), iv = v.id();
  return t.push(std::move(y), rg(a) || rg(v), [ia, iv](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).array() += g.array().colwise() * t.value(iv).col(0).array();
    if (t.requires_grad(iv)) t.grad(iv) += g.cwiseProduct(t.value(ia)).rowwise().sum();
  });
}

Var mul_rowvec(Var a, Var w) {
  Tape& t = tape_of(a, w);
  if (w.rows() != 1 || w.cols() != a.cols()) throw std::invalid_argument("autodiff: mul_rowvec shape mismatch");
  Matrix y = a.value().array().rowwise() * w.value().row(0).array();
  const int ia = a.id(), iw = w.id();
  return t.push(std::move(y), rg(a) || rg(w), [ia, iw](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad(ia).array() += g.array().rowwise() * t.value(iw).row(0).array();
    if (t.requires_grad(iw)) t.grad(iw) += g.cwiseProduct(t.value(ia)).colwise().sum();
  });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var reciprocal(Var a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}
Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var log_sigmoid(Var a) {
  return unary(
      a, [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(x)); });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return t.push(std::move(y), rg(a), [ia](Tape& t, int self) { t.grad(ia).array() += t.grad(self)(0, 0); });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("autodiff: mean of empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var col_sums(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().colwise().sum(), rg(a), [ia](Tape& t, int self) {
    t.grad(ia).rowwise() += t.grad(self).row(0);
  });
}

Var row_sums(Var a) {
  Tape& t = tape_of(a);
  const int ia = a.id();
  return t.push(a.value().rowwise().sum(), rg(a), [ia](Tape& t, int self) {
    t.grad(ia).colwise() += t.grad(self).col(0);
  });
}

Var softmax_cols(Var a) {
  Tape& t = tape_of(a);
  Matrix y = a.value();
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double m = y.col(j).maxCoeff();
    y.col(j) = (y.col(j).array() - m).exp().matrix();
    y.col(j) /= y.col(j).sum();
  }
  const int ia = a.id();
  return t.push(std::move(y), rg(a), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double dot = g.col(j).dot(y.col(j));
      ga.col(j).array() += y.col(j).array() * (g.col(j).array() - dot);
    }
  });
}

Var log_softmax_cols(Var a) {
  Tape& t = tape_of(a);
  Matrix y = a.value();
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    const double m = y.col(j).maxCoeff();
    const double lse = m + std::log((y.col(j).array() - m).exp().sum());
    y.col(j).array() -= lse;
  }
  const int ia = a.id();
  return t.push(std::move(y), rg(a), [ia](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double gs = g.col(j).sum();
      ga.col(j).array() += g.col(j).array() - y.col(j).array().exp() * gs;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_rows of nothing");
  Tape& t = tape_of(parts.front());
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool need = false;
  std::vector<int> ids;
  for (Var p : parts) {
    if (p.tape() != &t || p.cols() != cols) throw std::invalid_argument("autodiff: concat_rows mismatch");
    rows += p.rows();
    need = need || rg(p);
    ids.push_back(p.id());
  }
  Matrix y(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.push(std::move(y), need, [ids](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index r = 0;
    for (int id : ids) {
      const Eigen::Index n = t.value(id).rows();
      if (t.requires_grad(id)) t.grad(id) += g.middleRows(r, n);
      r += n;
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_cols of nothing");
  Tape& t = tape_of(parts.front());
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool need = false;
  std::vector<int> ids;
  for (Var p : parts) {
    if (p.tape() != &t || p.rows() != rows) throw std::invalid_argument("autodiff: concat_cols mismatch");
    cols += p.cols();
    need = need || rg(p);
    ids.push_back(p.id());
  }
  Matrix y(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.push(std::move(y), need, [ids](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index c = 0;
    for (int id : ids) {
      const Eigen::Index n = t.value(id).cols();
      if (t.requires_grad(id)) t.grad(id) += g.middleCols(c, n);
      c += n;
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = tape_of(a);
  if (start < 0 || n < 0 || start + n > a.rows()) throw std::out_of_range("autodiff: slice_rows");
  const int ia = a.id();
  return t.push(a.value().middleRows(start, n), rg(a),
                [ia, start, n](Tape& t, int self) { t.grad(ia).middleRows(start, n) += t.grad(self); });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index n) {
  Tape& t = tape_of(a);
  if (start < 0 || n < 0 || start + n > a.cols()) throw std::out_of_range("autodiff: slice_cols");
  const int ia = a.id();
  return t.push(a.value().middleCols(start, n), rg(a),
                [ia, start, n](Tape& t, int self) { t.grad(ia).middleCols(start, n) += t.grad(self); });
}

Var gather_cols(Var a, const std::vector<int>& index) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix y = Matrix::Zero(av.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] >= av.cols()) throw std::out_of_range("autodiff: gather_cols index");
    if (index[j] >= 0) y.col(static_cast<Eigen::Index>(j)) = av.col(index[j]);
  }
  const int ia = a.id();
  return t.push(std::move(y), rg(a), [ia, index](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t j = 0; j < index.size(); ++j)
      if (index[j] >= 0) ga.col(index[j]) += g.col(static_cast<Eigen::Index>(j));
  });
}

Var gather(Var a, const std::vector<long>& src, Eigen::Index rows, Eigen::Index cols) {
  Tape& t = tape_of(a);
  if (static_cast<Eigen::Index>(src.size()) != rows * cols) throw std::invalid_argument("autodiff: gather size");
  const Matrix& av = a.value();
  Matrix y = Matrix::Zero(rows, cols);
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k] >= av.size()) throw std::out_of_range("autodiff: gather index");
    if (src[k] >= 0) y.data()[k] = av.data()[src[k]];
  }
  const int ia = a.id();
  return t.push(std::move(y), rg(a), [ia, src](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (std::size_t k = 0; k < src.size(); ++k)
      if (src[k] >= 0) ga.data()[src[k]] += g.data()[k];
  });
}

Var pick(Var a, const std::vector<int>& index) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (static_cast<Eigen::Index>(index.size()) != av.cols()) throw std::invalid_argument("autodiff: pick size");
  Matrix y = Matrix::Zero(1, av.cols());
  for (Eigen::Index j = 0; j < av.cols(); ++j) {
    const int r = index[static_cast<std::size_t>(j)];
    if (r >= av.rows()) throw std::out_of_range("autodiff: pick index");
    if (r >= 0) y(0, j) = av(r, j);
  }
  const int ia = a.id();
  return t.push(std::move(y), rg(a), [ia, index](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(ia);
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const int r = index[static_cast<std::size_t>(j)];
      if (r >= 0) ga(r, j) += g(0, j);
    }
  });
}

}  // namespace magic::ad
