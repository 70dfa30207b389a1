#include "gradpack/harness/models.hpp"

#include "gradpack/errors.hpp"
#include "gradpack/layers.hpp"

namespace gradpack::harness {

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {"logreg", "mlp2", "cnn-small", "cnn-sigmoid"};
  return names;
}

bool image_model(const std::string& name) { return name == "cnn-small" || name == "cnn-sigmoid"; }

Shape sample_shape(const std::string& name, const ModelSize& size) {
  if (image_model(name)) return {size.channels, size.height, size.width};
  return {size.features};
}

namespace {

using Layers = std::vector<std::unique_ptr<Layer>>;

Network cnn(const ModelSize& s, bool sigmoid_head) {
  if (s.height % 4 || s.width % 4 || s.height == 0 || s.width == 0) {
    throw ConfigurationError("cnn models need image sides divisible by 4, got " +
                             std::to_string(s.height) + "x" + std::to_string(s.width));
  }
  ConvGeometry g;
  g.kernel_h = g.kernel_w = 3;
  g.pad_h = g.pad_w = 1;
  std::size_t h = s.height, w = s.width;
  Layers l;
  l.push_back(std::make_unique<Conv2d>(s.channels, s.conv1, h, w, g));
  l.push_back(std::make_unique<ReLU>(Shape{s.conv1, h, w}));
  l.push_back(std::make_unique<MaxPool2d>(s.conv1, h, w, 2, 2));
  h /= 2;
  w /= 2;
  l.push_back(std::make_unique<Conv2d>(s.conv1, s.conv2, h, w, g));
  l.push_back(std::make_unique<ReLU>(Shape{s.conv2, h, w}));
  l.push_back(std::make_unique<MaxPool2d>(s.conv2, h, w, 2, 2));
  h /= 2;
  w /= 2;
  l.push_back(std::make_unique<Flatten>(Shape{s.conv2, h, w}));
  l.push_back(std::make_unique<Linear>(s.conv2 * h * w, s.hidden));
  if (sigmoid_head)
    l.push_back(std::make_unique<Sigmoid>(Shape{s.hidden}));
  else
    l.push_back(std::make_unique<ReLU>(Shape{s.hidden}));
  l.push_back(std::make_unique<Linear>(s.hidden, s.classes));
  return Network(std::move(l), s.loss);
}

}  // namespace

Network make_model(const std::string& name, const ModelSize& s) {
  Layers l;
  if (name == "logreg") {
    l.push_back(std::make_unique<Linear>(s.features, s.classes));
    return Network(std::move(l), s.loss);
  }
  if (name == "mlp2") {
    l.push_back(std::make_unique<Linear>(s.features, s.hidden));
    l.push_back(std::make_unique<ReLU>(Shape{s.hidden}));
    l.push_back(std::make_unique<Linear>(s.hidden, s.hidden));
    l.push_back(std::make_unique<ReLU>(Shape{s.hidden}));
    l.push_back(std::make_unique<Linear>(s.hidden, s.classes));
    return Network(std::move(l), s.loss);
  }
  if (name == "cnn-small") return cnn(s, false);
  if (name == "cnn-sigmoid") return cnn(s, true);
  throw ConfigurationError("unknown model '" + name + "'");
}

}  // namespace gradpack::harness
