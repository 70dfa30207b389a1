#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gradpack/tensor.hpp"

namespace gradpack {

namespace kernels {

// c[m x p] += A[m x k] * b[k x p], where A(i, l) = a[i * a_row + l * a_col].
// Every entry of c accumulates its k products in increasing l, so any two
// routes to the same product agree bit for bit.
void gemm(std::size_t m, std::size_t k, std::size_t p, const double* a,
          std::size_t a_row, std::size_t a_col, const double* b, double* c);

// c[m x p] += a[m x k] * b[p x k]^T with the same accumulation order.
void gemm_nt(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c);

}  // namespace kernels

Tensor matmul(const Tensor& a, const Tensor& b);     // a b
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a b^T

Tensor transpose(const Tensor& a);
// [B x R x C] -> [B x C x R]
Tensor swap_last_two(const Tensor& a);

struct ConvGeometry {
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  // Throws ConfigurationError unless the sliding window tiles the padded
  // input exactly with at least one position.
  std::size_t out_h(std::size_t in_h) const;
  std::size_t out_w(std::size_t in_w) const;
};

// x is one [C x H x W] image; cols receives [(C*kh*kw) x (outH*outW)] with
// rows ordered channel, kernel row, kernel column. Padding reads as zero.
void im2col(std::span<const double> x, std::size_t channels, std::size_t height,
            std::size_t width, const ConvGeometry& g, std::span<double> cols);
// Adjoint of im2col: scatter-adds columns back into the image (x += ...).
void col2im(std::span<const double> cols, std::size_t channels, std::size_t height,
            std::size_t width, const ConvGeometry& g, std::span<double> x);

Tensor im2col(const Tensor& x, const ConvGeometry& g);

enum class ReduceOp { sum, max };

// Removes the listed axes. Sums accumulate in row-major input order.
Tensor reduce(const Tensor& x, const std::vector<std::size_t>& axes, ReduceOp op);

}  // namespace gradpack
