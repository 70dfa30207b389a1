#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradpack/tensor.hpp"

namespace gradpack {

// Cached forward values of one layer for a batch of N samples:
// input is z^(i-1) stacked as [N x in_shape], output is z^(i) as [N x out_shape].
struct LayerIO {
  const Tensor& input;
  const Tensor& output;

  std::size_t batch() const { return input.dim(0); }
};

// One parameter tensor of a layer (weight or bias). size() is d^(i).
struct ParamBlock {
  std::string name;
  Tensor value;

  std::size_t size() const { return value.numel(); }
};

// Per-sample symmetric factor S_n stacked as [N x dim x K]. A negative sign
// marks factors of a residual's negative eigenspace; their squared
// contractions are subtracted.
struct SqrtFactor {
  Tensor data;
  int sign = 1;

  std::size_t columns() const { return data.dim(2); }
};

// A sequential network stage. Every product takes per-sample column stacks
// M of shape [N x dim x K]: K = 1 for gradients, K = C for exact curvature
// factors, K = m for Monte-Carlo factors.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;

  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t in_dim() const { return shape_numel(input_shape_); }
  std::size_t out_dim() const { return shape_numel(output_shape_); }

  // input: [N x input_shape()] -> [N x output_shape()]. Row n of the result
  // depends on row n of the input only.
  virtual Tensor forward(const Tensor& input) const = 0;

  // result[n, :, k] = (J_{z^(i-1)_n} z^(i)_n)^T M[n, :, k]
  virtual Tensor jac_t_mat_prod(const LayerIO& io, const Tensor& m) const = 0;
  // result[n, :, k] = J_{z^(i-1)_n} z^(i)_n M[n, :, k]
  virtual Tensor jac_mat_prod(const LayerIO& io, const Tensor& m) const = 0;

  std::span<ParamBlock> params() { return params_; }
  std::span<const ParamBlock> params() const { return params_; }

  // Per-sample (J_theta z_n)^T M[n] as [N x d x K], or its sum over samples
  // as [d x K]. The sum adds the per-sample terms in sample order, so it
  // equals the row-sum of the unsummed result bit for bit.
  virtual Tensor param_jac_t_mat_prod(const LayerIO& io, std::size_t block,
                                      const Tensor& m, bool sum_samples) const;

  // Diagonal of the input residual R_n(z^(i-1)): entry [n, j] is
  // sigma''(z_n[j]) * grad_out[n, j]. Empty for layers without second
  // derivative.
  virtual std::optional<Tensor> residual_diag(const LayerIO& io,
                                              const Tensor& grad_out) const;

  virtual bool elementwise() const { return false; }
  // True when the layer has non-vanishing second derivatives w.r.t. its input.
  virtual bool has_curvature() const { return false; }
  // True when J_{z^(i-1)} z^(i) does not depend on the sample.
  virtual bool constant_jacobian() const { return false; }

 protected:
  Layer(Shape input_shape, Shape output_shape);

  void check_input(const Tensor& input) const;
  void check_io(const LayerIO& io) const;
  // m must be [N x dim x K] with N from io.
  void check_columns(const LayerIO& io, const Tensor& m, std::size_t dim,
                     const char* what) const;
  void check_block(std::size_t block) const;

  std::vector<ParamBlock> params_;

 private:
  Shape input_shape_;
  Shape output_shape_;
};

}  // namespace gradpack
