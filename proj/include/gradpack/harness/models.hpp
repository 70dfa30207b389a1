#pragma once

#include <string>
#include <vector>

#include "gradpack/network.hpp"

namespace gradpack::harness {

// Sizes for the model zoo. Defaults are MNIST-shaped; tests shrink them.
struct ModelSize {
  std::size_t channels = 1;  // image models
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t features = 784;  // flat models
  std::size_t classes = 10;
  std::size_t hidden = 64;     // mlp2 hidden width, cnn head width
  std::size_t conv1 = 8;
  std::size_t conv2 = 16;
  LossKind loss = LossKind::cross_entropy;
};

//   logreg       Linear
//   mlp2         Linear ReLU Linear ReLU Linear
//   cnn-small    Conv ReLU Pool Conv ReLU Pool Flatten Linear ReLU Linear
//   cnn-sigmoid  cnn-small with a Sigmoid in place of the last ReLU
// Convolutions are 3x3 with padding 1, pools 2x2 with stride 2, so image
// sides must be divisible by 4.
Network make_model(const std::string& name, const ModelSize& size);

const std::vector<std::string>& model_names();

// True for models that take [N x C x H x W] input.
bool image_model(const std::string& name);

// Input shape of one sample.
Shape sample_shape(const std::string& name, const ModelSize& size);

}  // namespace gradpack::harness
