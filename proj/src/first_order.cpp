#include "gradpack/first_order.hpp"

#include "gradpack/errors.hpp"
#include "gradpack/layers.hpp"

namespace gradpack::first_order {

Tensor batch_grad(const Layer& layer, const LayerIO& io, std::size_t block,
                  const Tensor& grad_out) {
  Tensor per_sample = layer.param_jac_t_mat_prod(io, block, grad_out, false);
  const std::size_t n = per_sample.dim(0), d = per_sample.dim(1);
  return std::move(per_sample).reshaped({n, d});
}

namespace {

Moments linear_moments(const Linear& layer, const LayerIO& io, std::size_t block,
                       const Tensor& grad_out, bool want_l2, bool want_sgs) {
  const std::size_t n = io.batch(), q = layer.out_dim(), p = layer.in_dim();
  const auto scale = static_cast<double>(n);
  const Tensor& x = io.input;
  Moments out;
  if (want_l2) out.batch_l2 = Tensor({n});
  if (want_sgs) out.sum_grad_squared = Tensor({layer.params()[block].size()});

  Tensor::Storage x_sq(p);
  for (std::size_t s = 0; s < n; ++s) {
    const double* g = grad_out.data() + s * q;
    double g_norm = 0.0;
    for (std::size_t o = 0; o < q; ++o) g_norm += g[o] * g[o];

    if (block == 1) {
      if (want_l2) (*out.batch_l2)[s] = g_norm;
      if (want_sgs) {
        double* acc = out.sum_grad_squared->data();
        for (std::size_t o = 0; o < q; ++o) acc[o] += g[o] * g[o];
      }
      continue;
    }

    const double* xs = x.data() + s * p;
    double x_norm = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      x_sq[i] = xs[i] * xs[i];
      x_norm += x_sq[i];
    }
    if (want_l2) (*out.batch_l2)[s] = x_norm * g_norm;
    if (want_sgs) {
      // Square the individual entry itself rather than g^2 x^2, so that a
      // single sample reproduces grad^2 bit for bit.
      double* acc = out.sum_grad_squared->data();
      for (std::size_t o = 0; o < q; ++o) {
        const double go = g[o];
        double* row = acc + o * p;
        for (std::size_t i = 0; i < p; ++i) {
          const double v = go * xs[i];
          row[i] += v * v;
        }
      }
    }
  }
  // Rows carry 1/N; the second moment is defined on unscaled gradients.
  if (want_sgs) *out.sum_grad_squared *= scale;
  return out;
}

// Per-sample gradients one at a time into an O(d) buffer.
Moments streaming_moments(const Layer& layer, const LayerIO& io, std::size_t block,
                          const Tensor& grad_out, bool want_l2, bool want_sgs) {
  const std::size_t n = io.batch(), d = layer.params()[block].size();
  const std::size_t out_dim = layer.out_dim();
  Moments out;
  if (want_l2) out.batch_l2 = Tensor({n});
  if (want_sgs) out.sum_grad_squared = Tensor({d});

  const auto* conv = dynamic_cast<const Conv2d*>(&layer);
  Tensor::Storage cols, row(d);
  if (conv) cols.resize(conv->patch_size() * conv->positions());

  for (std::size_t s = 0; s < n; ++s) {
    const double* g = grad_out.data() + s * out_dim;
    std::fill(row.begin(), row.end(), 0.0);
    if (conv && block == 0) {
      conv->unfold(io.input.sample(s), cols);
      kernels::gemm_nt(conv->out_channels(), conv->positions(), conv->patch_size(), g,
                       cols.data(), row.data());
    } else if (conv) {
      const std::size_t pos = conv->positions();
      for (std::size_t c = 0; c < conv->out_channels(); ++c)
        for (std::size_t j = 0; j < pos; ++j) row[c] += g[c * pos + j];
    } else {
      // Generic layers: single-sample slices through param_jac_t_mat_prod.
      Shape in_shape = io.input.shape();
      in_shape[0] = 1;
      Shape out_shape = io.output.shape();
      out_shape[0] = 1;
      Tensor xi(in_shape, io.input.sample(s));
      Tensor yi(out_shape, io.output.sample(s));
      Tensor gi({1, out_dim, 1}, grad_out.sample(s));
      Tensor r = layer.param_jac_t_mat_prod(LayerIO{xi, yi}, block, gi, true);
      std::copy(r.values().begin(), r.values().end(), row.begin());
    }
    if (want_l2) {
      double norm = 0.0;
      for (double v : row) norm += v * v;
      (*out.batch_l2)[s] = norm;
    }
    if (want_sgs) {
      double* acc = out.sum_grad_squared->data();
      for (std::size_t j = 0; j < d; ++j) acc[j] += row[j] * row[j];
    }
  }
  if (want_sgs) *out.sum_grad_squared *= static_cast<double>(n);
  return out;
}

}  // namespace

Moments moments(const Layer& layer, const LayerIO& io, std::size_t block,
                const Tensor& grad_out, bool want_l2, bool want_second_moment) {
  if (layer.params().empty()) throw UnsupportedOperation(layer.kind() + " has no parameters");
  if (block >= layer.params().size()) {
    throw ConfigurationError(layer.kind() + " has no parameter block " + std::to_string(block));
  }
  if (grad_out.ndim() != 3 || grad_out.dim(0) != io.batch() ||
      grad_out.dim(1) != layer.out_dim() || grad_out.dim(2) != 1) {
    throw DimensionError(layer.kind() + ": gradient must be [N x out x 1], got " +
                         shape_string(grad_out.shape()));
  }
  if (const auto* linear = dynamic_cast<const Linear*>(&layer)) {
    return linear_moments(*linear, io, block, grad_out, want_l2, want_second_moment);
  }
  return streaming_moments(layer, io, block, grad_out, want_l2, want_second_moment);
}

Tensor batch_l2(const Layer& layer, const LayerIO& io, std::size_t block,
                const Tensor& grad_out) {
  return *moments(layer, io, block, grad_out, true, false).batch_l2;
}

Tensor sum_grad_squared(const Layer& layer, const LayerIO& io, std::size_t block,
                        const Tensor& grad_out) {
  return *moments(layer, io, block, grad_out, false, true).sum_grad_squared;
}

Tensor variance(const Tensor& sum_grad_squared, const Tensor& grad) {
  if (sum_grad_squared.numel() != grad.numel()) {
    throw DimensionError("variance: second moment " + shape_string(sum_grad_squared.shape()) +
                         " and gradient " + shape_string(grad.shape()) + " differ");
  }
  Tensor out({grad.numel()});
  for (std::size_t j = 0; j < grad.numel(); ++j)
    out[j] = sum_grad_squared[j] - grad[j] * grad[j];
  return out;
}

}  // namespace gradpack::first_order
