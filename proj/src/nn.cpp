#include "magic/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace magic::nn {

Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng, double gain) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

Affine::Affine(const std::string& name, Eigen::Index out, Eigen::Index in, Rng& rng, double gain)
    : weight(name + ".weight", glorot(out, in, rng, gain)), bias(name + ".bias", Matrix::Zero(out, 1)) {}

Var Affine::operator()(const Binder& b, Var x) { return ad::add_bias(ad::matmul(b(weight), x), b(bias)); }

LstmCell::LstmCell(const std::string& name, Eigen::Index in, Eigen::Index h, Rng& rng)
    : weight(name + ".weight", glorot(4 * h, in + h, rng)), bias(name + ".bias", Matrix::Zero(4 * h, 1)), hidden(h) {
  bias.value.block(h, 0, h, 1).setOnes();  // forget gate starts open
}

LstmCell::State LstmCell::step(const Binder& b, Var x, const State& s) {
  Var z = ad::add_bias(ad::matmul(b(weight), ad::concat_rows({x, s.h})), b(bias));
  Var i = ad::sigmoid(ad::slice_rows(z, 0, hidden));
  Var f = ad::sigmoid(ad::slice_rows(z, hidden, hidden));
  Var g = ad::tanh(ad::slice_rows(z, 2 * hidden, hidden));
  Var o = ad::sigmoid(ad::slice_rows(z, 3 * hidden, hidden));
  Var c = ad::add(ad::mul(f, s.c), ad::mul(i, g));
  Var h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

Var blend_columns(Tape& t, Var a, Var b, const Matrix& mask_row) {
  Var m = t.constant(mask_row);
  Var inv = t.constant((1.0 - mask_row.array()).matrix());
  return ad::add(ad::mul_rowvec(a, m), ad::mul_rowvec(b, inv));
}

Adam::Adam(std::vector<Parameter*> params, Options opt) : params_(std::move(params)), opt_(opt) {
  for (Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() { zero_grads(params_); }

double Adam::step() {
  const double norm = global_grad_norm(params_);
  double factor = 1.0;
  if (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) factor = opt_.clip_norm / norm;
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Matrix g = p.grad * factor;
    m_[k] = opt_.beta1 * m_[k] + (1.0 - opt_.beta1) * g;
    v_[k] = opt_.beta2 * v_[k] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    p.value.array() -= opt_.lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + opt_.eps);
  }
  return norm;
}

double global_grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const Parameter* p : params) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

void zero_grads(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->zero_grad();
}

bool all_finite(const std::vector<Parameter*>& params) {
  for (const Parameter* p : params)
    if (!p->value.allFinite()) return false;
  return true;
}

GradCheckResult check_gradients(const std::vector<Parameter*>& params, const std::function<double()>& loss,
                                const std::function<void()>& analytic, double step, double floor,
                                long max_elements_per_param) {
  analytic();
  std::vector<Matrix> grads;
  for (const Parameter* p : params) grads.push_back(p->grad);

  GradCheckResult res;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const long n = static_cast<long>(p.value.size());
    const long limit = max_elements_per_param < 0 ? n : std::min(n, max_elements_per_param);
    for (long e = 0; e < limit; ++e) {
      // Spread the sampled elements across the whole tensor.
      const long idx = limit == n ? e : (e * n) / limit;
      double& x = p.value.data()[idx];
      const double orig = x;
      x = orig + step;
      const double up = loss();
      x = orig - step;
      const double down = loss();
      x = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grads[k].data()[idx];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_error || res.worst_index < 0) {
        if (rel >= res.max_rel_error) {
          res.max_rel_error = rel;
          res.worst_param = p.name;
          res.worst_index = idx;
          res.analytic_at_worst = a;
          res.numeric_at_worst = numeric;
        }
      }
    }
  }
  return res;
}

}  // namespace magic::nn
