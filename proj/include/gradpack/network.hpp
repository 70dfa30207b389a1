#pragma once

#include <memory>
#include <span>
#include <vector>

#include "gradpack/layer.hpp"
#include "gradpack/loss.hpp"

namespace gradpack {

// f = T^(L) o ... o T^(1) followed by a loss. Owns its layers.
class Network {
 public:
  Network(std::vector<std::unique_ptr<Layer>> layers, LossKind loss);

  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  LossKind loss() const { return loss_; }

  const Shape& input_shape() const { return layers_.front()->input_shape(); }
  std::size_t classes() const { return layers_.back()->out_dim(); }
  std::size_t num_params() const;

  Tensor predict(const Tensor& input) const;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init_params(Rng& rng);

  // All parameters concatenated in layer/block order.
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> values);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  LossKind loss_;
};

}  // namespace gradpack
