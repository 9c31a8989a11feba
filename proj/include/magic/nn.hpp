#pragma once

#include "magic/autodiff.hpp"
#include "magic/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace magic::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Glorot-uniform initialisation.
Matrix glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng, double gain = 1.0);

/// Chooses how a parameter enters a tape: as a trainable leaf or as a frozen
/// constant that gradients pass through without touching.
struct Binder {
  Tape& tape;
  bool trainable = true;
  Var operator()(Parameter& p) const { return trainable ? tape.param(p) : tape.frozen(p); }
};

struct Affine {
  Parameter weight;
  Parameter bias;

  Affine() = default;
  Affine(const std::string& name, Eigen::Index out, Eigen::Index in, Rng& rng, double gain = 1.0);
  Var operator()(const Binder& b, Var x);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight); out.push_back(&bias); }
  Eigen::Index in_dim() const { return weight.value.cols(); }
  Eigen::Index out_dim() const { return weight.value.rows(); }
};

/// Single LSTM cell, gates stacked (input, forget, cell, output).
struct LstmCell {
  Parameter weight;  // 4h x (in + h)
  Parameter bias;    // 4h x 1
  Eigen::Index hidden = 0;

  LstmCell() = default;
  LstmCell(const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng);

  struct State {
    Var h;
    Var c;
  };
  State step(const Binder& b, Var x, const State& s);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weight); out.push_back(&bias); }
};

/// Elementwise m*a + (1-m)*b with m a 1 x B mask row (1 keeps `a`).
Var blend_columns(Tape& t, Var a, Var b, const Matrix& mask_row);

class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 0.0;  // 0 disables clipping
  };

  Adam(std::vector<Parameter*> params, Options opt);
  void zero_grad();
  /// Applies one update from the accumulated gradients. Returns the gradient
  /// norm before clipping.
  double step();
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  Options opt_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

double global_grad_norm(const std::vector<Parameter*>& params);
void zero_grads(const std::vector<Parameter*>& params);
bool all_finite(const std::vector<Parameter*>& params);

/// Central finite-difference comparison against analytic gradients.
///
/// `loss` must rebuild the computation from the current parameter values and
/// return the scalar loss; `analytic` must zero and then fill every parameter
/// gradient. Relative error per element is |a - n| / max(|a|, |n|, floor).
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  long worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  long checked = 0;
};

GradCheckResult check_gradients(const std::vector<Parameter*>& params, const std::function<double()>& loss,
                                const std::function<void()>& analytic, double step = 1e-5, double floor = 1e-4,
                                long max_elements_per_param = -1);

}  // namespace magic::nn
