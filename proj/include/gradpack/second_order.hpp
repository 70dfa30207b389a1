#pragma once

#include <span>
#include <vector>

#include "gradpack/extensions.hpp"
#include "gradpack/layer.hpp"

namespace gradpack::second_order {

// sign * (1/N) sum_n sum_k [(J_theta z_n)^T S_n]_{jk}^2 for one factor,
// without forming the d x d block. Result is [d].
Tensor diag_from_factor(const Layer& layer, const LayerIO& io, std::size_t block,
                        const SqrtFactor& factor);

Tensor diag_ggn(const Layer& layer, const LayerIO& io, std::size_t block,
                const SqrtFactor& exact);
Tensor diag_ggn_mc(const Layer& layer, const LayerIO& io, std::size_t block,
                   const SqrtFactor& sampled);
// Signed sum over the loss factor and every residual factor received so far.
Tensor diag_hessian(const Layer& layer, const LayerIO& io, std::size_t block,
                    std::span<const SqrtFactor> factors);

// A = (1/N) sum_n sum_positions patch patch^T over the layer inputs.
// Linear and Conv2d only.
Tensor input_factor(const Layer& layer, const LayerIO& io);
// (1/N) sum_n sum_positions S S^T, summing spatial positions of a channel.
Tensor output_factor(const Layer& layer, const SqrtFactor& factor);

KroneckerPair kfac(const Layer& layer, const LayerIO& io, std::size_t block,
                   const SqrtFactor& sampled);
KroneckerPair kflr(const Layer& layer, const LayerIO& io, std::size_t block,
                   const SqrtFactor& exact);
// gbar is the averaged [out_dim x out_dim] curvature of the layer output.
KroneckerPair kfra(const Layer& layer, const LayerIO& io, std::size_t block,
                   const Tensor& gbar);

// gbar^(i-1) = (1/N) sum_n J_n^T gbar^(i) J_n.
Tensor propagate_gbar(const Layer& layer, const LayerIO& io, const Tensor& gbar);

// (1/N) sum_n S_n S_n^T for a [N x C x K] factor.
Tensor mean_outer(const Tensor& factor);

// Square roots of the positive and negative parts of the diagonal input
// residual, as [N x in x in] factors with signs +1 and -1. grad_out holds
// the unscaled per-sample gradients grad_z l_n. Empty for layers without
// residual.
std::vector<SqrtFactor> residual_factors(const Layer& layer, const LayerIO& io,
                                         const Tensor& grad_out);

}  // namespace gradpack::second_order
