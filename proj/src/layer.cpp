#include "gradpack/layer.hpp"

#include <algorithm>

#include "gradpack/errors.hpp"

namespace gradpack {

Layer::Layer(Shape input_shape, Shape output_shape)
    : input_shape_(std::move(input_shape)), output_shape_(std::move(output_shape)) {}

Tensor Layer::param_jac_t_mat_prod(const LayerIO&, std::size_t, const Tensor&, bool) const {
  throw UnsupportedOperation(kind() + " has no parameters");
}

std::optional<Tensor> Layer::residual_diag(const LayerIO&, const Tensor&) const {
  return std::nullopt;
}

void Layer::check_input(const Tensor& input) const {
  const auto& s = input.shape();
  if (s.size() != input_shape_.size() + 1 ||
      !std::equal(input_shape_.begin(), input_shape_.end(), s.begin() + 1)) {
    throw ConfigurationError(kind() + " expects input [N x " +
                             shape_string(input_shape_).substr(1) + ", got " +
                             shape_string(s));
  }
}

void Layer::check_io(const LayerIO& io) const {
  check_input(io.input);
  if (io.output.ndim() == 0 || io.output.dim(0) != io.batch() ||
      io.output.sample_size() != out_dim()) {
    throw DimensionError(kind() + ": cached output " + shape_string(io.output.shape()) +
                         " does not match the layer");
  }
}

void Layer::check_columns(const LayerIO& io, const Tensor& m, std::size_t dim,
                          const char* what) const {
  if (m.ndim() != 3 || m.dim(0) != io.batch() || m.dim(1) != dim) {
    throw DimensionError(kind() + "::" + what + ": expected [" +
                         std::to_string(io.batch()) + " x " + std::to_string(dim) +
                         " x K], got " + shape_string(m.shape()));
  }
}

void Layer::check_block(std::size_t block) const {
  if (block >= params_.size()) {
    throw ConfigurationError(kind() + " has no parameter block " + std::to_string(block));
  }
}

}  // namespace gradpack
