#include "magic/alignment.hpp"

#include <stdexcept>

namespace magic {

using ad::Matrix;
using ad::Var;

Mapper::Mapper(const std::string& name, int in, int out_dim, int hidden_dim, Rng& rng, bool identity_skip)
    : skip(name + ".skip", out_dim, in, rng),
      hidden(name + ".hidden", hidden_dim, in, rng),
      out(name + ".out", out_dim, hidden_dim, rng, 0.1) {
  if (identity_skip && in == out_dim) skip.weight.value.setIdentity();
}

Var Mapper::operator()(const nn::Binder& b, Var x) { return ad::add(skip(b, x), out(b, ad::tanh(hidden(b, x)))); }

std::vector<ad::Parameter*> Mapper::parameters() {
  std::vector<ad::Parameter*> p;
  skip.collect(p);
  hidden.collect(p);
  out.collect(p);
  return p;
}

void Mapper::set_identity() {
  if (skip.in_dim() != skip.out_dim()) throw std::invalid_argument("Mapper::set_identity: dimensions differ");
  skip.weight.value.setIdentity();
  skip.bias.value.setZero();
  out.weight.value.setZero();
  out.bias.value.setZero();
}

Critic::Critic(const std::string& name, int in, int hidden, Rng& rng)
    : l1(name + ".l1", hidden, in, rng), l2(name + ".l2", hidden, hidden, rng), l3(name + ".l3", 1, hidden, rng) {}

Var Critic::operator()(const nn::Binder& b, Var x) { return l3(b, ad::tanh(l2(b, ad::tanh(l1(b, x))))); }

Var Critic::input_gradient(const nn::Binder& b, Var x) {
  Var a1 = ad::tanh(l1(b, x));
  Var a2 = ad::tanh(l2(b, a1));
  auto dtanh = [](Var a) { return ad::add_scalar(ad::scale(ad::square(a), -1.0), 1.0); };
  Var g2 = ad::mul_colvec(dtanh(a2), ad::transpose(b(l3.weight)));           // h x B
  Var g1 = ad::mul(dtanh(a1), ad::matmul(ad::transpose(b(l2.weight)), g2));  // h x B
  return ad::matmul(ad::transpose(b(l1.weight)), g1);                        // in x B
}

std::vector<ad::Parameter*> Critic::parameters() {
  std::vector<ad::Parameter*> p;
  l1.collect(p);
  l2.collect(p);
  l3.collect(p);
  return p;
}

CriticTerms critic_loss(const nn::Binder& b, Critic& critic, Var real, Var fake, double lambda_gp,
                        const Eigen::RowVectorXd& mix, const std::optional<Eigen::RowVectorXd>& real_weights,
                        const std::optional<Eigen::RowVectorXd>& fake_weights) {
  if (real.cols() == 0 || fake.cols() == 0) throw std::invalid_argument("critic_loss: empty batch");
  if (real.rows() != fake.rows() || real.rows() != critic.l1.in_dim())
    throw std::invalid_argument("critic_loss: dimension mismatch");
  const Eigen::Index n = std::min(real.cols(), fake.cols());
  if (mix.size() != n) throw std::invalid_argument("critic_loss: need one mixing weight per pair");
  ad::Tape& t = b.tape;
  CriticTerms out;
  auto expectation = [&](Var scores, const std::optional<Eigen::RowVectorXd>& w) {
    if (!w) return ad::mean(scores);
    if (w->size() != scores.cols()) throw std::invalid_argument("critic_loss: need one weight per column");
    return ad::sum(ad::mul(scores, t.constant(Matrix(*w))));
  };
  out.gap = ad::sub(expectation(critic(b, real), real_weights), expectation(critic(b, fake), fake_weights));
  Var x_hat = ad::add(ad::mul_rowvec(ad::slice_cols(real, 0, n), t.constant(mix)),
                      ad::mul_rowvec(ad::slice_cols(fake, 0, n), t.constant((1.0 - mix.array()).matrix())));
  Var grad = critic.input_gradient(b, x_hat);
  Var norms = ad::sqrt(ad::add_scalar(ad::col_sums(ad::square(grad)), 1e-12));
  out.penalty = ad::mean(ad::square(ad::add_scalar(norms, -1.0)));
  out.loss = ad::add(ad::scale(out.gap, -1.0), ad::scale(out.penalty, lambda_gp));
  return out;
}

Var generator_loss(const nn::Binder& b, Critic& critic, Var fake, std::optional<Var> weights) {
  Var scores = critic(b, fake);
  if (!weights) return ad::scale(ad::mean(scores), -1.0);
  if (weights->cols() != scores.cols() || weights->rows() != 1)
    throw std::invalid_argument("generator_loss: weights must be 1 x B");
  return ad::scale(ad::sum(ad::mul(scores, *weights)), -1.0);
}

AlignmentTerms cycle_alignment_loss(const nn::Binder& gen, const nn::Binder& crit, Var image_batch, Var sentence_batch,
                                    const AlignmentModules& m, double lambda_A, double lambda_C,
                                    std::optional<Var> image_weights) {
  if (image_batch.rows() != m.image_to_sentence.skip.in_dim() || sentence_batch.rows() != m.sentence_to_image.skip.in_dim())
    throw std::invalid_argument("cycle_alignment_loss: dimension mismatch");
  AlignmentTerms out;
  Var mapped_image = m.image_to_sentence(gen, image_batch);       // e x B_I
  Var mapped_sentence = m.sentence_to_image(gen, sentence_batch);  // d x B_S
  out.adv_image = generator_loss(crit, m.sentence_critic, mapped_image, image_weights);
  out.adv_sentence = generator_loss(crit, m.image_critic, mapped_sentence);
  Var back_image = m.sentence_to_image(gen, mapped_image);
  Var back_sentence = m.image_to_sentence(gen, mapped_sentence);
  out.cycle = ad::add(ad::mean(ad::abs(ad::sub(back_image, image_batch))),
                      ad::mean(ad::abs(ad::sub(back_sentence, sentence_batch))));
  out.total = ad::scale(ad::add(ad::add(out.adv_image, out.adv_sentence), ad::scale(out.cycle, lambda_C)), lambda_A);
  return out;
}

}  // namespace magic
