#pragma once

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "gradpack/layer.hpp"
#include "gradpack/tensor.hpp"

namespace gradpack {

using Labels = std::vector<std::size_t>;
// Class labels for cross-entropy, [N x C] targets for squared error.
using Targets = std::variant<Labels, Tensor>;

using Rng = std::mt19937_64;

enum class LossKind { cross_entropy, mse };

// Mean loss over the batch with the per-sample derivatives the backward
// sweep starts from.
struct LossOutput {
  LossKind kind = LossKind::cross_entropy;
  double value = 0.0;   // (1/N) sum_n l_n
  Tensor grad;          // [N x C], row n = (1/N) grad_f l_n
  Tensor hess_sqrt;     // [N x C x C], S_n S_n^T = hessian of l_n (unscaled)
  Tensor prediction;    // softmax probabilities (cross-entropy) or raw output (mse)

  std::size_t batch() const { return grad.dim(0); }
  std::size_t classes() const { return grad.dim(1); }
};

// l_n = -log softmax(logits_n)[label_n]. The Hessian factor is
// diag(sqrt p)(I - sqrt p sqrt p^T), which squares to diag(p) - p p^T.
LossOutput cross_entropy(const Tensor& logits, const Labels& labels);

// l_n = sum_c (pred - target)^2, Hessian 2I, factor sqrt(2) I.
LossOutput mse(const Tensor& prediction, const Tensor& target);

LossOutput evaluate_loss(LossKind kind, const Tensor& output, const Targets& targets);

// Monte-Carlo factor [N x C x m]: column j is grad_f l(f_n, y_hat) / sqrt(m)
// with y_hat drawn from the model's predictive distribution: categorical
// softmax for cross-entropy, Normal(pred, I/2) for squared error.
SqrtFactor mc_sample(const LossOutput& loss, Rng& rng, std::size_t m = 1);

}  // namespace gradpack
