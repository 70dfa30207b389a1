#include "gradpack/loss.hpp"

#include <algorithm>
#include <cmath>

#include "gradpack/errors.hpp"

namespace gradpack {

LossOutput cross_entropy(const Tensor& logits, const Labels& labels) {
  if (logits.ndim() != 2) {
    throw DimensionError("cross_entropy expects logits [N x C], got " +
                         shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " samples");
  }
  if (n == 0) throw DimensionError("cross_entropy: empty batch");

  LossOutput out;
  out.kind = LossKind::cross_entropy;
  out.grad = Tensor({n, c});
  out.hess_sqrt = Tensor({n, c, c});
  out.prediction = Tensor({n, c});

  double total = 0.0;
  std::vector<double> q(c);
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] >= c) {
      throw ConfigurationError("label " + std::to_string(labels[s]) + " of sample " +
                               std::to_string(s) + " outside [0, " + std::to_string(c) +
                               ")");
    }
    const double* z = logits.data() + s * c;
    const double zmax = *std::max_element(z, z + c);
    double norm = 0.0;
    for (std::size_t j = 0; j < c; ++j) norm += std::exp(z[j] - zmax);
    const double log_norm = std::log(norm) + zmax;
    total += log_norm - z[labels[s]];

    double* p = out.prediction.data() + s * c;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - log_norm);
      q[j] = std::sqrt(p[j]);
    }
    double* g = out.grad.data() + s * c;
    for (std::size_t j = 0; j < c; ++j) {
      g[j] = (p[j] - (j == labels[s] ? 1.0 : 0.0)) / static_cast<double>(n);
    }
    double* h = out.hess_sqrt.data() + s * c * c;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        h[i * c + j] = q[i] * ((i == j ? 1.0 : 0.0) - q[i] * q[j]);
  }
  out.value = total / static_cast<double>(n);
  return out;
}

LossOutput mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.ndim() != 2 || prediction.shape() != target.shape()) {
    throw DimensionError("mse expects matching [N x C] prediction and target, got " +
                         shape_string(prediction.shape()) + " and " +
                         shape_string(target.shape()));
  }
  const std::size_t n = prediction.dim(0), c = prediction.dim(1);
  if (n == 0) throw DimensionError("mse: empty batch");

  LossOutput out;
  out.kind = LossKind::mse;
  out.grad = Tensor({n, c});
  out.hess_sqrt = Tensor({n, c, c});
  out.prediction = prediction;

  const double root2 = std::sqrt(2.0);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t j = 0; j < c; ++j) {
      const double r = prediction[s * c + j] - target[s * c + j];
      total += r * r;
      out.grad[s * c + j] = 2.0 * r / static_cast<double>(n);
      out.hess_sqrt[(s * c + j) * c + j] = root2;
    }
  }
  out.value = total / static_cast<double>(n);
  return out;
}

LossOutput evaluate_loss(LossKind kind, const Tensor& output, const Targets& targets) {
  if (kind == LossKind::cross_entropy) {
    const auto* labels = std::get_if<Labels>(&targets);
    if (!labels) throw ConfigurationError("cross-entropy needs class labels");
    return cross_entropy(output, *labels);
  }
  const auto* values = std::get_if<Tensor>(&targets);
  if (!values) throw ConfigurationError("squared error needs tensor targets");
  return mse(output, *values);
}

SqrtFactor mc_sample(const LossOutput& loss, Rng& rng, std::size_t m) {
  if (m == 0) throw ConfigurationError("mc_sample needs at least one draw");
  const std::size_t n = loss.batch(), c = loss.classes();
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  SqrtFactor factor{Tensor({n, c, m}), 1};
  double* out = factor.data.data();

  if (loss.kind == LossKind::cross_entropy) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    for (std::size_t s = 0; s < n; ++s) {
      const double* p = loss.prediction.data() + s * c;
      for (std::size_t j = 0; j < m; ++j) {
        // Inverse-CDF draw; the last class absorbs rounding in the cumulative sum.
        const double u = uniform(rng);
        std::size_t label = c - 1;
        double cumulative = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
          cumulative += p[i];
          if (u < cumulative) {
            label = i;
            break;
          }
        }
        for (std::size_t i = 0; i < c; ++i)
          out[(s * c + i) * m + j] = scale * (p[i] - (i == label ? 1.0 : 0.0));
      }
    }
  } else {
    std::normal_distribution<double> noise(0.0, std::sqrt(0.5));
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < c; ++i)
          out[(s * c + i) * m + j] = scale * (-2.0 * noise(rng));
  }
  return factor;
}

}  // namespace gradpack
