#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gradpack/errors.hpp"
#include "gradpack/layer.hpp"
#include "gradpack/linalg.hpp"

namespace gradpack {

class Identity final : public Layer {
 public:
  explicit Identity(Shape shape);

  std::string kind() const override { return "Identity"; }
  Tensor forward(const Tensor& input) const override;
  Tensor jac_t_mat_prod(const LayerIO& io, const Tensor& m) const override;
  Tensor jac_mat_prod(const LayerIO& io, const Tensor& m) const override;
  bool constant_jacobian() const override { return true; }
};

// z = W x + b with W stored [out x in] and b [out]. Block 0 is the weight,
// block 1 the bias.
class Linear final : public Layer {
 public:
  Linear(std::size_t in_features, std::size_t out_features);

  std::string kind() const override { return "Linear"; }
  std::size_t in_features() const { return in_dim(); }
  std::size_t out_features() const { return out_dim(); }
  const Tensor& weight() const { return params_[0].value; }
  const Tensor& bias() const { return params_[1].value; }
  Tensor& weight() { return params_[0].value; }
  Tensor& bias() { return params_[1].value; }

  Tensor forward(const Tensor& input) const override;
  Tensor jac_t_mat_prod(const LayerIO& io, const Tensor& m) const override;
  Tensor jac_mat_prod(const LayerIO& io, const Tensor& m) const override;
  Tensor param_jac_t_mat_prod(const LayerIO& io, std::size_t block, const Tensor& m,
                              bool sum_samples) const override;
  bool constant_jacobian() const override { return true; }
};

// Cross-correlation over [C x H x W] images through im2col. Weight is
// [C_out x C_in x kh x kw] (row-major, so it reads as [C_out x R] with
// R = C_in*kh*kw), bias is [C_out].
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t height,
         std::size_t width, ConvGeometry geometry);

  std::string kind() const override { return "Conv2d"; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return out_channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  const ConvGeometry& geometry() const { return geometry_; }
  std::size_t patch_size() const;   // R
  std::size_t positions() const;    // outH * outW
  const Tensor& weight() const { return params_[0].value; }
  const Tensor& bias() const { return params_[1].value; }
  Tensor& weight() { return params_[0].value; }
  Tensor& bias() { return params_[1].value; }

  // Unfolded input of sample n, [R x positions].
  void unfold(std::span<const double> image, std::span<double> cols) const;

  Tensor forward(const Tensor& input) const override;
  Tensor jac_t_mat_prod(const LayerIO& io, const Tensor& m) const override;
  Tensor jac_mat_prod(const LayerIO& io, const Tensor& m) const override;
  Tensor param_jac_t_mat_prod(const LayerIO& io, std::size_t block, const Tensor& m,
                              bool sum_samples) const override;
  bool constant_jacobian() const override { return true; }

 private:
  std::size_t in_channels_;
  std::size_t out_channels_;
  std::size_t height_;
  std::size_t width_;
  ConvGeometry geometry_;
};

// Element-wise activation; Fn supplies value(x), first(x, y) and second(x, y)
// where y = value(x).
template <class Fn>
class Activation : public Layer {
 public:
  explicit Activation(Shape shape) : Layer(shape, shape) {}

  std::string kind() const override { return Fn::name; }
  bool elementwise() const override { return true; }
  bool has_curvature() const override { return Fn::curved; }

  Tensor forward(const Tensor& input) const override {
    check_input(input);
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = Fn::value(input[i]);
    return out;
  }

  Tensor jac_t_mat_prod(const LayerIO& io, const Tensor& m) const override {
    check_io(io);
    check_columns(io, m, out_dim(), "jac_t_mat_prod");
    return scale_columns(io, m);
  }

  Tensor jac_mat_prod(const LayerIO& io, const Tensor& m) const override {
    check_io(io);
    check_columns(io, m, in_dim(), "jac_mat_prod");
    return scale_columns(io, m);
  }

  std::optional<Tensor> residual_diag(const LayerIO& io,
                                      const Tensor& grad_out) const override {
    if constexpr (!Fn::curved) {
      return std::nullopt;
    } else {
      check_io(io);
      Tensor r({io.batch(), in_dim()});
      if (grad_out.numel() != r.numel()) {
        throw DimensionError(kind() + "::residual_diag: gradient " +
                             shape_string(grad_out.shape()) + " does not match " +
                             shape_string(r.shape()));
      }
      for (std::size_t i = 0; i < r.numel(); ++i)
        r[i] = Fn::second(io.input[i], io.output[i]) * grad_out[i];
      return r;
    }
  }

 private:
  Tensor scale_columns(const LayerIO& io, const Tensor& m) const {
    const std::size_t k = m.dim(2);
    Tensor out(m.shape());
    for (std::size_t i = 0; i < io.input.numel(); ++i) {
      const double d = Fn::first(io.input[i], io.output[i]);
      const double* src = m.data() + i * k;
      double* dst = out.data() + i * k;
      for (std::size_t c = 0; c < k; ++c) dst[c] = d * src[c];
    }
    return out;
  }
};

struct ReluFn {
  static constexpr const char* name = "ReLU";
  static constexpr bool curved = false;
  static double value(double x) { return x > 0.0 ? x : 0.0; }
  static double first(double x, double) { return x > 0.0 ? 1.0 : 0.0; }
  static double second(double, double) { return 0.0; }
};

struct SigmoidFn {
  static constexpr const char* name = "Sigmoid";
  static constexpr bool curved = true;
  static double value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  }
  static double first(double, double y) { return y * (1.0 - y); }
  static double second(double, double y) { return y * (1.0 - y) * (1.0 - 2.0 * y); }
};

struct TanhFn {
  static constexpr const char* name = "Tanh";
  static constexpr bool curved = true;
  static double value(double x) { return std::tanh(x); }
  static double first(double, double y) { return 1.0 - y * y; }
  static double second(double, double y) { return -2.0 * y * (1.0 - y * y); }
};

using ReLU = Activation<ReluFn>;
using Sigmoid = Activation<SigmoidFn>;
using Tanh = Activation<TanhFn>;

// Non-overlapping or strided max pooling over [C x H x W], no padding.
// Ties go to the first input position in row-major order.
class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride);

  std::string kind() const override { return "MaxPool2d"; }
  Tensor forward(const Tensor& input) const override;
  Tensor jac_t_mat_prod(const LayerIO& io, const Tensor& m) const override;
  Tensor jac_mat_prod(const LayerIO& io, const Tensor& m) const override;

  // For every sample and output entry, the flat per-sample input index of
  // the selected maximum. [N * out_dim]
  std::vector<std::uint32_t> argmax(const Tensor& input) const;

 private:
  std::size_t channels_, height_, width_;
  ConvGeometry geometry_;
};

class Flatten final : public Layer {
 public:
  explicit Flatten(Shape input_shape);

  std::string kind() const override { return "Flatten"; }
  Tensor forward(const Tensor& input) const override;
  Tensor jac_t_mat_prod(const LayerIO& io, const Tensor& m) const override;
  Tensor jac_mat_prod(const LayerIO& io, const Tensor& m) const override;
  bool constant_jacobian() const override { return true; }
};

}  // namespace gradpack
