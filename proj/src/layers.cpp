#include "gradpack/layers.hpp"

#include <algorithm>

#include "gradpack/errors.hpp"

namespace gradpack {

namespace {
Shape with_batch(std::size_t n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

// Copies column k of every [dim x K] slab of m into a contiguous [dim] span.
void gather_column(const double* slab, std::size_t dim, std::size_t k, std::size_t cols,
                   std::span<double> out) {
  for (std::size_t j = 0; j < dim; ++j) out[j] = slab[j * cols + k];
}

void scatter_column(std::span<const double> in, std::size_t k, std::size_t cols,
                    double* slab) {
  for (std::size_t j = 0; j < in.size(); ++j) slab[j * cols + k] = in[j];
}
}  // namespace

// ---------------------------------------------------------------- Identity

Identity::Identity(Shape shape) : Layer(shape, shape) {}

Tensor Identity::forward(const Tensor& input) const {
  check_input(input);
  return input;
}

Tensor Identity::jac_t_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, out_dim(), "jac_t_mat_prod");
  return m;
}

Tensor Identity::jac_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, in_dim(), "jac_mat_prod");
  return m;
}

// ------------------------------------------------------------------ Linear

Linear::Linear(std::size_t in_features, std::size_t out_features)
    : Layer({in_features}, {out_features}) {
  if (in_features == 0 || out_features == 0) {
    throw ConfigurationError("Linear needs positive feature counts");
  }
  params_.push_back({"weight", Tensor({out_features, in_features})});
  params_.push_back({"bias", Tensor({out_features})});
}

Tensor Linear::forward(const Tensor& input) const {
  check_input(input);
  Tensor out = matmul_nt(input, weight());
  const std::size_t q = out_dim();
  for (std::size_t n = 0; n < input.dim(0); ++n)
    for (std::size_t o = 0; o < q; ++o) out[n * q + o] += bias()[o];
  return out;
}

Tensor Linear::jac_t_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, out_dim(), "jac_t_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2);
  if (k == 1) {
    return matmul(m.reshaped({n, out_dim()}), weight()).reshaped({n, in_dim(), 1});
  }
  Tensor rows = swap_last_two(m).reshaped({n * k, out_dim()});
  return swap_last_two(matmul(rows, weight()).reshaped({n, k, in_dim()}));
}

Tensor Linear::jac_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, in_dim(), "jac_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2);
  if (k == 1) {
    return matmul_nt(m.reshaped({n, in_dim()}), weight()).reshaped({n, out_dim(), 1});
  }
  Tensor rows = swap_last_two(m).reshaped({n * k, in_dim()});
  return swap_last_two(matmul_nt(rows, weight()).reshaped({n, k, out_dim()}));
}

Tensor Linear::param_jac_t_mat_prod(const LayerIO& io, std::size_t block, const Tensor& m,
                                    bool sum_samples) const {
  check_block(block);
  check_io(io);
  check_columns(io, m, out_dim(), "param_jac_t_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2);
  const std::size_t q = out_dim(), p = in_dim();
  const Tensor& x = io.input;

  if (block == 1) {
    if (!sum_samples) return m;
    Tensor acc({q, k});
    for (std::size_t s = 0; s < n; ++s) {
      const double* ms = m.data() + s * q * k;
      for (std::size_t i = 0; i < q * k; ++i) acc[i] += ms[i];
    }
    return acc;
  }

  if (sum_samples) {
    if (k == 1) {
      // Contraction over the sample axis runs in sample order.
      return matmul_tn(m.reshaped({n, q}), x).reshaped({q * p, 1});
    }
    Tensor acc({q * p, k});
    for (std::size_t s = 0; s < n; ++s) {
      const double* xs = x.data() + s * p;
      const double* ms = m.data() + s * q * k;
      for (std::size_t o = 0; o < q; ++o) {
        for (std::size_t i = 0; i < p; ++i) {
          double* dst = acc.data() + (o * p + i) * k;
          for (std::size_t c = 0; c < k; ++c) dst[c] += ms[o * k + c] * xs[i];
        }
      }
    }
    return acc;
  }

  Tensor out({n, q * p, k});
  if (k == 1) {
    for (std::size_t s = 0; s < n; ++s) {
      const double* xs = x.data() + s * p;
      const double* ms = m.data() + s * q;
      double* dst = out.data() + s * q * p;
      for (std::size_t o = 0; o < q; ++o)
        for (std::size_t i = 0; i < p; ++i) dst[o * p + i] = ms[o] * xs[i];
    }
    return out;
  }
  for (std::size_t s = 0; s < n; ++s) {
    const double* xs = x.data() + s * p;
    const double* ms = m.data() + s * q * k;
    double* dst = out.data() + s * q * p * k;
    for (std::size_t o = 0; o < q; ++o) {
      for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t c = 0; c < k; ++c) dst[(o * p + i) * k + c] = ms[o * k + c] * xs[i];
      }
    }
  }
  return out;
}

// ------------------------------------------------------------------ Conv2d

namespace {
Shape conv_output_shape(std::size_t out_channels, std::size_t height, std::size_t width,
                        const ConvGeometry& g) {
  return {out_channels, g.out_h(height), g.out_w(width)};
}
}  // namespace

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t height,
               std::size_t width, ConvGeometry geometry)
    : Layer({in_channels, height, width},
            conv_output_shape(out_channels, height, width, geometry)),
      in_channels_(in_channels),
      out_channels_(out_channels),
      height_(height),
      width_(width),
      geometry_(geometry) {
  if (in_channels == 0 || out_channels == 0) {
    throw ConfigurationError("Conv2d needs positive channel counts");
  }
  params_.push_back(
      {"weight", Tensor({out_channels, in_channels, geometry.kernel_h, geometry.kernel_w})});
  params_.push_back({"bias", Tensor({out_channels})});
}

std::size_t Conv2d::patch_size() const {
  return in_channels_ * geometry_.kernel_h * geometry_.kernel_w;
}

std::size_t Conv2d::positions() const { return output_shape()[1] * output_shape()[2]; }

void Conv2d::unfold(std::span<const double> image, std::span<double> cols) const {
  im2col(image, in_channels_, height_, width_, geometry_, cols);
}

Tensor Conv2d::forward(const Tensor& input) const {
  check_input(input);
  const std::size_t n = input.dim(0), r = patch_size(), pos = positions();
  Tensor out(with_batch(n, output_shape()));
  Tensor::Storage cols(r * pos);
  for (std::size_t s = 0; s < n; ++s) {
    unfold(input.sample(s), cols);
    double* ys = out.data() + s * out_channels_ * pos;
    kernels::gemm(out_channels_, r, pos, weight().data(), r, 1, cols.data(), ys);
    for (std::size_t c = 0; c < out_channels_; ++c)
      for (std::size_t j = 0; j < pos; ++j) ys[c * pos + j] += bias()[c];
  }
  return out;
}

Tensor Conv2d::jac_t_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, out_dim(), "jac_t_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2), r = patch_size(), pos = positions();
  Tensor out({n, in_dim(), k});
  Tensor::Storage g(out_dim()), cols(r * pos), image(in_dim());
  for (std::size_t s = 0; s < n; ++s) {
    const double* slab = m.data() + s * out_dim() * k;
    for (std::size_t c = 0; c < k; ++c) {
      gather_column(slab, out_dim(), c, k, g);
      std::fill(cols.begin(), cols.end(), 0.0);
      kernels::gemm(r, out_channels_, pos, weight().data(), 1, r, g.data(), cols.data());
      std::fill(image.begin(), image.end(), 0.0);
      col2im(cols, in_channels_, height_, width_, geometry_, image);
      scatter_column(image, c, k, out.data() + s * in_dim() * k);
    }
  }
  return out;
}

Tensor Conv2d::jac_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, in_dim(), "jac_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2), r = patch_size(), pos = positions();
  Tensor out({n, out_dim(), k});
  Tensor::Storage v(in_dim()), cols(r * pos), y(out_dim());
  for (std::size_t s = 0; s < n; ++s) {
    const double* slab = m.data() + s * in_dim() * k;
    for (std::size_t c = 0; c < k; ++c) {
      gather_column(slab, in_dim(), c, k, v);
      unfold(v, cols);
      std::fill(y.begin(), y.end(), 0.0);
      kernels::gemm(out_channels_, r, pos, weight().data(), r, 1, cols.data(), y.data());
      scatter_column(y, c, k, out.data() + s * out_dim() * k);
    }
  }
  return out;
}

Tensor Conv2d::param_jac_t_mat_prod(const LayerIO& io, std::size_t block, const Tensor& m,
                                    bool sum_samples) const {
  check_block(block);
  check_io(io);
  check_columns(io, m, out_dim(), "param_jac_t_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2), r = patch_size(), pos = positions();
  const std::size_t d = params_[block].size();

  Tensor out = sum_samples ? Tensor({d, k}) : Tensor({n, d, k});
  Tensor::Storage sample_result(d * k);

  if (block == 1) {
    for (std::size_t s = 0; s < n; ++s) {
      const double* slab = m.data() + s * out_dim() * k;
      std::fill(sample_result.begin(), sample_result.end(), 0.0);
      for (std::size_t co = 0; co < out_channels_; ++co)
        for (std::size_t j = 0; j < pos; ++j)
          for (std::size_t c = 0; c < k; ++c)
            sample_result[co * k + c] += slab[(co * pos + j) * k + c];
      double* dst = sum_samples ? out.data() : out.data() + s * d * k;
      for (std::size_t i = 0; i < d * k; ++i) {
        if (sum_samples) {
          dst[i] += sample_result[i];
        } else {
          dst[i] = sample_result[i];
        }
      }
    }
    return out;
  }

  Tensor::Storage cols(r * pos), g(out_dim()), dw(d);
  for (std::size_t s = 0; s < n; ++s) {
    unfold(io.input.sample(s), cols);
    const double* slab = m.data() + s * out_dim() * k;
    for (std::size_t c = 0; c < k; ++c) {
      const double* gp = slab;
      if (k != 1) {
        gather_column(slab, out_dim(), c, k, g);
        gp = g.data();
      }
      std::fill(dw.begin(), dw.end(), 0.0);
      kernels::gemm_nt(out_channels_, pos, r, gp, cols.data(), dw.data());
      for (std::size_t i = 0; i < d; ++i) sample_result[i * k + c] = dw[i];
    }
    double* dst = sum_samples ? out.data() : out.data() + s * d * k;
    for (std::size_t i = 0; i < d * k; ++i) {
      if (sum_samples) {
        dst[i] += sample_result[i];
      } else {
        dst[i] = sample_result[i];
      }
    }
  }
  return out;
}

// --------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(std::size_t channels, std::size_t height, std::size_t width,
                     std::size_t kernel, std::size_t stride)
    : Layer({channels, height, width},
            conv_output_shape(channels, height, width,
                              ConvGeometry{kernel, kernel, stride, stride, 0, 0})),
      channels_(channels),
      height_(height),
      width_(width),
      geometry_{kernel, kernel, stride, stride, 0, 0} {}

std::vector<std::uint32_t> MaxPool2d::argmax(const Tensor& input) const {
  const std::size_t n = input.dim(0);
  const std::size_t oh = output_shape()[1], ow = output_shape()[2];
  std::vector<std::uint32_t> index(n * out_dim());
  for (std::size_t s = 0; s < n; ++s) {
    const double* x = input.data() + s * in_dim();
    std::uint32_t* dst = index.data() + s * out_dim();
    for (std::size_t c = 0; c < channels_; ++c) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = c * height_ * width_ + oy * geometry_.stride_h * width_ +
                             ox * geometry_.stride_w;
          for (std::size_t ki = 0; ki < geometry_.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < geometry_.kernel_w; ++kj) {
              const std::size_t at = c * height_ * width_ +
                                     (oy * geometry_.stride_h + ki) * width_ +
                                     ox * geometry_.stride_w + kj;
              if (x[at] > x[best]) best = at;
            }
          }
          dst[(c * oh + oy) * ow + ox] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return index;
}

Tensor MaxPool2d::forward(const Tensor& input) const {
  check_input(input);
  const auto index = argmax(input);
  Tensor out(with_batch(input.dim(0), output_shape()));
  for (std::size_t s = 0; s < input.dim(0); ++s)
    for (std::size_t o = 0; o < out_dim(); ++o)
      out[s * out_dim() + o] = input[s * in_dim() + index[s * out_dim() + o]];
  return out;
}

Tensor MaxPool2d::jac_t_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_io(io);
  check_columns(io, m, out_dim(), "jac_t_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2);
  const auto index = argmax(io.input);
  Tensor out({n, in_dim(), k});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < out_dim(); ++o) {
      const double* src = m.data() + (s * out_dim() + o) * k;
      double* dst = out.data() + (s * in_dim() + index[s * out_dim() + o]) * k;
      for (std::size_t c = 0; c < k; ++c) dst[c] += src[c];
    }
  }
  return out;
}

Tensor MaxPool2d::jac_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_io(io);
  check_columns(io, m, in_dim(), "jac_mat_prod");
  const std::size_t n = m.dim(0), k = m.dim(2);
  const auto index = argmax(io.input);
  Tensor out({n, out_dim(), k});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < out_dim(); ++o) {
      const double* src = m.data() + (s * in_dim() + index[s * out_dim() + o]) * k;
      std::copy(src, src + k, out.data() + (s * out_dim() + o) * k);
    }
  }
  return out;
}

// ----------------------------------------------------------------- Flatten

Flatten::Flatten(Shape input_shape) : Layer(input_shape, {shape_numel(input_shape)}) {}

Tensor Flatten::forward(const Tensor& input) const {
  check_input(input);
  return input.reshaped({input.dim(0), in_dim()});
}

Tensor Flatten::jac_t_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, out_dim(), "jac_t_mat_prod");
  return m;
}

Tensor Flatten::jac_mat_prod(const LayerIO& io, const Tensor& m) const {
  check_columns(io, m, in_dim(), "jac_mat_prod");
  return m;
}

}  // namespace gradpack
