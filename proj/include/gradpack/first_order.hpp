#pragma once

#include <optional>

#include "gradpack/layer.hpp"

namespace gradpack::first_order {

// All hooks receive grad_out as [N x out_dim x 1] holding (1/N) grad_z l_n,
// which is what the backward sweep carries for a mean loss.
//
// Scaling, per quantity (g_n = grad_theta l_n, unscaled):
//   batch_grad       row n = g_n / N
//   batch_l2         entry n = ||g_n / N||^2
//   sum_grad_squared entry j = (1/N) sum_n g_n[j]^2
//   variance         entry j = sum_grad_squared[j] - (grad L)[j]^2

// [N x d]
Tensor batch_grad(const Layer& layer, const LayerIO& io, std::size_t block,
                  const Tensor& grad_out);

// [N]. Linear and Conv2d never build the [N x d] individual gradients.
Tensor batch_l2(const Layer& layer, const LayerIO& io, std::size_t block,
                const Tensor& grad_out);

// [d]. Linear and Conv2d never build the [N x d] individual gradients.
Tensor sum_grad_squared(const Layer& layer, const LayerIO& io, std::size_t block,
                        const Tensor& grad_out);

// [d] from the second moment and the mean gradient (both flattened).
Tensor variance(const Tensor& sum_grad_squared, const Tensor& grad);

struct Moments {
  std::optional<Tensor> batch_l2;
  std::optional<Tensor> sum_grad_squared;
};

// batch_l2 and sum_grad_squared from one pass over the samples.
Moments moments(const Layer& layer, const LayerIO& io, std::size_t block,
                const Tensor& grad_out, bool want_l2, bool want_second_moment);

}  // namespace gradpack::first_order
