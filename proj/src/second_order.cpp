#include "gradpack/second_order.hpp"

#include <cmath>

#include "gradpack/errors.hpp"
#include "gradpack/layers.hpp"
#include "gradpack/linalg.hpp"

namespace gradpack::second_order {

namespace {

// Output channels and spatial positions per channel; Linear is one position.
struct ChannelLayout {
  std::size_t channels;
  std::size_t positions;
};

ChannelLayout channel_layout(const Layer& layer) {
  if (const auto* conv = dynamic_cast<const Conv2d*>(&layer)) {
    return {conv->out_channels(), conv->positions()};
  }
  if (dynamic_cast<const Linear*>(&layer)) return {layer.out_dim(), 1};
  throw UnsupportedOperation(layer.kind() + " has no Kronecker structure");
}

void check_factor(const Layer& layer, const LayerIO& io, const Tensor& f) {
  if (f.ndim() != 3 || f.dim(0) != io.batch() || f.dim(1) != layer.out_dim()) {
    throw DimensionError(layer.kind() + ": factor " + shape_string(f.shape()) +
                         " does not match [N x " + std::to_string(layer.out_dim()) + " x K]");
  }
}

Tensor linear_diag(const Linear& layer, const LayerIO& io, std::size_t block,
                   const Tensor& f) {
  const std::size_t n = io.batch(), q = layer.out_dim(), p = layer.in_dim(), k = f.dim(2);
  Tensor s2({n, q});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < q; ++o) {
      const double* row = f.data() + (s * q + o) * k;
      double acc = 0.0;
      for (std::size_t c = 0; c < k; ++c) acc += row[c] * row[c];
      s2[s * q + o] = acc;
    }
  if (block == 1) return reduce(s2, {0}, ReduceOp::sum);
  Tensor x2 = io.input;
  for (auto& v : x2.values()) v *= v;
  return matmul_tn(s2, x2).reshaped({q * p});
}

Tensor conv_diag(const Conv2d& layer, const LayerIO& io, std::size_t block, const Tensor& f) {
  const std::size_t n = io.batch(), k = f.dim(2), cout = layer.out_channels();
  const std::size_t pos = layer.positions(), r = layer.patch_size();
  const std::size_t d = layer.params()[block].size();
  Tensor acc({d});
  Tensor::Storage cols(block == 0 ? r * pos : 0), g(cout * pos), row(d);
  for (std::size_t s = 0; s < n; ++s) {
    if (block == 0) layer.unfold(io.input.sample(s), cols);
    const double* slab = f.data() + s * cout * pos * k;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < cout * pos; ++j) g[j] = slab[j * k + c];
      std::fill(row.begin(), row.end(), 0.0);
      if (block == 0) {
        kernels::gemm_nt(cout, pos, r, g.data(), cols.data(), row.data());
      } else {
        for (std::size_t ch = 0; ch < cout; ++ch)
          for (std::size_t j = 0; j < pos; ++j) row[ch] += g[ch * pos + j];
      }
      for (std::size_t j = 0; j < d; ++j) acc[j] += row[j] * row[j];
    }
  }
  return acc;
}

Tensor generic_diag(const Layer& layer, const LayerIO& io, std::size_t block,
                    const Tensor& f) {
  Tensor per_sample = layer.param_jac_t_mat_prod(io, block, f, false);
  const std::size_t n = per_sample.dim(0), d = per_sample.dim(1), k = per_sample.dim(2);
  Tensor acc({d});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t c = 0; c < k; ++c) {
        const double v = per_sample[(s * d + j) * k + c];
        acc[j] += v * v;
      }
  return acc;
}

// Slice sample s out of io's caches, keeping the batch axis.
struct SampleIO {
  Tensor input;
  Tensor output;
  LayerIO view() const { return {input, output}; }
};

SampleIO sample_io(const LayerIO& io, std::size_t s) {
  Shape in = io.input.shape(), out = io.output.shape();
  in[0] = 1;
  out[0] = 1;
  return {Tensor(in, io.input.sample(s)), Tensor(out, io.output.sample(s))};
}

Tensor two_sided(const Layer& layer, const LayerIO& io, const Tensor& gbar) {
  const std::size_t out = layer.out_dim(), in = layer.in_dim();
  Tensor m = gbar.reshaped({1, out, out});
  Tensor left = layer.jac_t_mat_prod(io, m);                   // J^T G   [in x out]
  Tensor right = layer.jac_t_mat_prod(io, swap_last_two(left));  // J^T G J [in x in]
  return std::move(right).reshaped({in, in});
}

KroneckerPair bias_pair(Tensor b) { return {Tensor({1, 1}, {1.0}), std::move(b)}; }

}  // namespace

Tensor diag_from_factor(const Layer& layer, const LayerIO& io, std::size_t block,
                        const SqrtFactor& factor) {
  check_factor(layer, io, factor.data);
  if (block >= layer.params().size()) {
    throw UnsupportedOperation(layer.kind() + " has no parameter block " +
                               std::to_string(block));
  }
  Tensor diag;
  if (const auto* linear = dynamic_cast<const Linear*>(&layer)) {
    diag = linear_diag(*linear, io, block, factor.data);
  } else if (const auto* conv = dynamic_cast<const Conv2d*>(&layer)) {
    diag = conv_diag(*conv, io, block, factor.data);
  } else {
    diag = generic_diag(layer, io, block, factor.data);
  }
  diag *= static_cast<double>(factor.sign) / static_cast<double>(io.batch());
  return diag;
}

Tensor diag_ggn(const Layer& layer, const LayerIO& io, std::size_t block,
                const SqrtFactor& exact) {
  return diag_from_factor(layer, io, block, exact);
}

Tensor diag_ggn_mc(const Layer& layer, const LayerIO& io, std::size_t block,
                   const SqrtFactor& sampled) {
  return diag_from_factor(layer, io, block, sampled);
}

Tensor diag_hessian(const Layer& layer, const LayerIO& io, std::size_t block,
                    std::span<const SqrtFactor> factors) {
  Tensor total({layer.params()[block].size()});
  for (const auto& f : factors) total += diag_from_factor(layer, io, block, f);
  return total;
}

Tensor input_factor(const Layer& layer, const LayerIO& io) {
  const auto n = static_cast<double>(io.batch());
  if (dynamic_cast<const Linear*>(&layer)) {
    Tensor a = matmul_tn(io.input, io.input);
    a *= 1.0 / n;
    return a;
  }
  if (const auto* conv = dynamic_cast<const Conv2d*>(&layer)) {
    const std::size_t r = conv->patch_size(), pos = conv->positions();
    Tensor a({r, r});
    Tensor::Storage cols(r * pos);
    for (std::size_t s = 0; s < io.batch(); ++s) {
      conv->unfold(io.input.sample(s), cols);
      kernels::gemm_nt(r, pos, r, cols.data(), cols.data(), a.data());
    }
    a *= 1.0 / n;
    return a;
  }
  throw UnsupportedOperation(layer.kind() + " has no Kronecker structure");
}

Tensor output_factor(const Layer& layer, const SqrtFactor& factor) {
  const auto [channels, positions] = channel_layout(layer);
  const Tensor& f = factor.data;
  const std::size_t n = f.dim(0), k = f.dim(2), width = positions * k;
  Tensor b({channels, channels});
  for (std::size_t s = 0; s < n; ++s) {
    // Rows of the sample slab are channels, each spanning positions * K.
    kernels::gemm_nt(channels, width, channels, f.data() + s * channels * width,
                     f.data() + s * channels * width, b.data());
  }
  b *= 1.0 / static_cast<double>(n);
  return b;
}

namespace {
Tensor bias_output_factor(const Layer& layer, const SqrtFactor& factor) {
  const auto [channels, positions] = channel_layout(layer);
  const Tensor& f = factor.data;
  const std::size_t n = f.dim(0), k = f.dim(2);
  Tensor summed({channels, k});
  Tensor b({channels, channels});
  for (std::size_t s = 0; s < n; ++s) {
    summed.fill(0.0);
    const double* slab = f.data() + s * channels * positions * k;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < positions; ++p)
        for (std::size_t j = 0; j < k; ++j) summed[c * k + j] += slab[(c * positions + p) * k + j];
    kernels::gemm_nt(channels, k, channels, summed.data(), summed.data(), b.data());
  }
  b *= 1.0 / static_cast<double>(n);
  return b;
}

KroneckerPair factor_pair(const Layer& layer, const LayerIO& io, std::size_t block,
                          const SqrtFactor& factor) {
  check_factor(layer, io, factor.data);
  if (block == 0) return {input_factor(layer, io), output_factor(layer, factor)};
  if (block == 1) return bias_pair(bias_output_factor(layer, factor));
  throw UnsupportedOperation(layer.kind() + " has no parameter block " + std::to_string(block));
}
}  // namespace

KroneckerPair kfac(const Layer& layer, const LayerIO& io, std::size_t block,
                   const SqrtFactor& sampled) {
  return factor_pair(layer, io, block, sampled);
}

KroneckerPair kflr(const Layer& layer, const LayerIO& io, std::size_t block,
                   const SqrtFactor& exact) {
  return factor_pair(layer, io, block, exact);
}

KroneckerPair kfra(const Layer& layer, const LayerIO& io, std::size_t block,
                   const Tensor& gbar) {
  const auto [channels, positions] = channel_layout(layer);
  if (gbar.ndim() != 2 || gbar.dim(0) != layer.out_dim() || gbar.dim(1) != layer.out_dim()) {
    throw DimensionError(layer.kind() + ": KFRA matrix " + shape_string(gbar.shape()) +
                         " does not match output dimension " +
                         std::to_string(layer.out_dim()));
  }
  const std::size_t dim = layer.out_dim();
  Tensor b({channels, channels});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t c2 = 0; c2 < channels; ++c2) {
      double acc = 0.0;
      if (block == 0) {
        for (std::size_t p = 0; p < positions; ++p)
          acc += gbar[(c * positions + p) * dim + c2 * positions + p];
      } else {
        for (std::size_t p = 0; p < positions; ++p)
          for (std::size_t p2 = 0; p2 < positions; ++p2)
            acc += gbar[(c * positions + p) * dim + c2 * positions + p2];
      }
      b[c * channels + c2] = acc;
    }
  if (block == 0) return {input_factor(layer, io), std::move(b)};
  if (block == 1) return bias_pair(std::move(b));
  throw UnsupportedOperation(layer.kind() + " has no parameter block " + std::to_string(block));
}

Tensor propagate_gbar(const Layer& layer, const LayerIO& io, const Tensor& gbar) {
  const std::size_t out = layer.out_dim(), in = layer.in_dim(), n = io.batch();
  if (gbar.ndim() != 2 || gbar.dim(0) != out || gbar.dim(1) != out) {
    throw DimensionError(layer.kind() + ": KFRA matrix " + shape_string(gbar.shape()) +
                         " does not match output dimension " + std::to_string(out));
  }
  if (layer.constant_jacobian()) {
    const SampleIO first = sample_io(io, 0);
    return two_sided(layer, first.view(), gbar);
  }
  if (layer.elementwise()) {
    // J_n = diag(d_n): the average is gbar scaled entrywise by mean(d d^T).
    Tensor ones({n, in, 1}, 1.0);
    Tensor d = layer.jac_t_mat_prod(io, ones).reshaped({n, in});
    Tensor dd = matmul_tn(d, d);
    for (std::size_t i = 0; i < in * in; ++i) dd[i] *= gbar[i] / static_cast<double>(n);
    return dd;
  }
  Tensor acc({in, in});
  for (std::size_t s = 0; s < n; ++s) {
    const SampleIO one = sample_io(io, s);
    acc += two_sided(layer, one.view(), gbar);
  }
  acc *= 1.0 / static_cast<double>(n);
  return acc;
}

Tensor mean_outer(const Tensor& factor) {
  const std::size_t n = factor.dim(0), c = factor.dim(1), k = factor.dim(2);
  Tensor g({c, c});
  for (std::size_t s = 0; s < n; ++s)
    kernels::gemm_nt(c, k, c, factor.data() + s * c * k, factor.data() + s * c * k, g.data());
  g *= 1.0 / static_cast<double>(n);
  return g;
}

std::vector<SqrtFactor> residual_factors(const Layer& layer, const LayerIO& io,
                                         const Tensor& grad_out) {
  const auto residual = layer.residual_diag(io, grad_out);
  std::vector<SqrtFactor> out;
  if (!residual) return out;
  const std::size_t n = io.batch(), in = layer.in_dim();
  SqrtFactor pos{Tensor({n, in, in}), 1};
  SqrtFactor neg{Tensor({n, in, in}), -1};
  bool any_pos = false, any_neg = false;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t j = 0; j < in; ++j) {
      const double r = (*residual)[s * in + j];
      const std::size_t at = (s * in + j) * in + j;
      if (r > 0.0) {
        pos.data[at] = std::sqrt(r);
        any_pos = true;
      } else if (r < 0.0) {
        neg.data[at] = std::sqrt(-r);
        any_neg = true;
      }
    }
  if (any_pos) out.push_back(std::move(pos));
  if (any_neg) out.push_back(std::move(neg));
  return out;
}

}  // namespace gradpack::second_order
