#include "gradpack/network.hpp"

#include <cmath>

#include "gradpack/errors.hpp"
#include "gradpack/layers.hpp"

namespace gradpack {

Network::Network(std::vector<std::unique_ptr<Layer>> layers, LossKind loss)
    : layers_(std::move(layers)), loss_(loss) {
  if (layers_.empty()) throw ConfigurationError("network needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = *layers_[i];
    if (l.has_curvature() && !l.elementwise()) {
      throw ConfigurationError("layer " + std::to_string(i) + " (" + l.kind() +
                               ") has input curvature but is not element-wise");
    }
    if (i > 0 && layers_[i - 1]->output_shape() != l.input_shape()) {
      throw ConfigurationError("layer " + std::to_string(i) + " (" + l.kind() +
                               ") expects " + shape_string(l.input_shape()) +
                               " but layer " + std::to_string(i - 1) + " produces " +
                               shape_string(layers_[i - 1]->output_shape()));
    }
  }
  if (layers_.back()->output_shape().size() != 1) {
    throw ConfigurationError("network output must be a vector, got " +
                             shape_string(layers_.back()->output_shape()));
  }
}

std::size_t Network::num_params() const {
  std::size_t total = 0;
  for (const auto& l : layers_)
    for (const auto& p : l->params()) total += p.size();
  return total;
}

Tensor Network::predict(const Tensor& input) const {
  Tensor z = input;
  for (const auto& l : layers_) z = l->forward(z);
  return z;
}

void Network::init_params(Rng& rng) {
  for (auto& l : layers_) {
    if (l->params().empty()) continue;
    const auto& w = l->params()[0].value;
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.numel() / w.dim(0)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& block : l->params())
      for (auto& v : block.value.values()) v = dist(rng);
  }
}

std::vector<double> Network::flat_params() const {
  std::vector<double> out;
  out.reserve(num_params());
  for (const auto& l : layers_)
    for (const auto& p : l->params())
      out.insert(out.end(), p.value.values().begin(), p.value.values().end());
  return out;
}

void Network::set_flat_params(std::span<const double> values) {
  if (values.size() != num_params()) {
    throw DimensionError("expected " + std::to_string(num_params()) + " parameters, got " +
                         std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for (auto& l : layers_) {
    for (auto& p : l->params()) {
      std::copy_n(values.begin() + offset, p.size(), p.value.values().begin());
      offset += p.size();
    }
  }
}

}  // namespace gradpack
