// Reference computations that do not go through the backward engine:
// finite differences on the forward pass, dense Jacobians, explicit loops.
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "gradpack/engine.hpp"
#include "gradpack/layers.hpp"
#include "gradpack/network.hpp"

namespace oracle {

using namespace gradpack;

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = normal(rng);
  return t;
}

inline Labels random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, classes - 1);
  Labels y(n);
  for (auto& v : y) v = d(rng);
  return y;
}

inline Shape batched(std::size_t n, const Shape& sample) {
  Shape s = sample;
  s.insert(s.begin(), n);
  return s;
}

// Row-wise softmax, computed directly.
inline std::vector<double> softmax(const double* z, std::size_t c) {
  double mx = z[0];
  for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, z[i]);
  std::vector<double> p(c);
  double sum = 0.0;
  for (std::size_t i = 0; i < c; ++i) sum += (p[i] = std::exp(z[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

// Mean loss, straight from the definition.
inline double loss_value(const Network& net, const Tensor& x, const Targets& y) {
  const Tensor f = net.predict(x);
  const std::size_t n = f.dim(0), c = f.dim(1);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const double* z = f.data() + s * c;
    if (net.loss() == LossKind::cross_entropy) {
      const auto p = softmax(z, c);
      total -= std::log(p[std::get<Labels>(y)[s]]);
    } else {
      const Tensor& t = std::get<Tensor>(y);
      for (std::size_t i = 0; i < c; ++i) total += (z[i] - t[s * c + i]) * (z[i] - t[s * c + i]);
    }
  }
  return total / static_cast<double>(n);
}

// Central differences of the mean loss with respect to every parameter.
inline std::vector<double> fd_gradient(Network& net, const Tensor& x, const Targets& y,
                                       double h = 1e-6) {
  std::vector<double> theta = net.flat_params(), g(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double keep = theta[j];
    theta[j] = keep + h;
    net.set_flat_params(theta);
    const double up = loss_value(net, x, y);
    theta[j] = keep - h;
    net.set_flat_params(theta);
    const double down = loss_value(net, x, y);
    theta[j] = keep;
    g[j] = (up - down) / (2 * h);
  }
  net.set_flat_params(theta);
  return g;
}

// Second differences of the mean loss along each coordinate.
inline std::vector<double> fd_hessian_diag(Network& net, const Tensor& x, const Targets& y,
                                           double h = 1e-4) {
  std::vector<double> theta = net.flat_params(), d(theta.size());
  const double mid = loss_value(net, x, y);
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double keep = theta[j];
    theta[j] = keep + h;
    net.set_flat_params(theta);
    const double up = loss_value(net, x, y);
    theta[j] = keep - h;
    net.set_flat_params(theta);
    const double down = loss_value(net, x, y);
    theta[j] = keep;
    d[j] = (up - 2 * mid + down) / (h * h);
  }
  net.set_flat_params(theta);
  return d;
}

// Dense Jacobian of sample s's network output w.r.t. all parameters,
// [C x D] row-major, by central differences of the forward pass.
inline std::vector<double> fd_output_jacobian(Network& net, const Tensor& x, std::size_t s,
                                              double h = 1e-6) {
  const std::size_t rows[] = {s};
  const Tensor xs = take_samples(x, rows);
  std::vector<double> theta = net.flat_params();
  const std::size_t c = net.classes(), d = theta.size();
  std::vector<double> jac(c * d);
  for (std::size_t j = 0; j < d; ++j) {
    const double keep = theta[j];
    theta[j] = keep + h;
    net.set_flat_params(theta);
    const Tensor up = net.predict(xs);
    theta[j] = keep - h;
    net.set_flat_params(theta);
    const Tensor down = net.predict(xs);
    theta[j] = keep;
    for (std::size_t i = 0; i < c; ++i) jac[i * d + j] = (up[i] - down[i]) / (2 * h);
  }
  net.set_flat_params(theta);
  return jac;
}

// Hessian of l_n w.r.t. the network output, [C x C].
inline std::vector<double> output_hessian(const Network& net, const Tensor& x, std::size_t s) {
  const std::size_t rows[] = {s};
  const Tensor f = net.predict(take_samples(x, rows));
  const std::size_t c = f.dim(1);
  std::vector<double> h(c * c, 0.0);
  if (net.loss() == LossKind::mse) {
    for (std::size_t i = 0; i < c; ++i) h[i * c + i] = 2.0;
    return h;
  }
  const auto p = softmax(f.data(), c);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) h[i * c + j] = (i == j ? p[i] : 0.0) - p[i] * p[j];
  return h;
}

// (1/N) sum_n J_n^T H_n J_n, dense [D x D]. For outputs linear in the
// parameters a large step is exact and avoids cancellation.
inline std::vector<double> dense_ggn(Network& net, const Tensor& x, double h = 1e-6) {
  const std::size_t n = x.dim(0), c = net.classes(), d = net.num_params();
  std::vector<double> g(d * d, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const auto jac = fd_output_jacobian(net, x, s, h);
    const auto hess = output_hessian(net, x, s);
    std::vector<double> hj(c * d, 0.0);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < d; ++j) hj[i * d + j] += hess[i * c + k] * jac[k * d + j];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) {
        double v = 0.0;
        for (std::size_t i = 0; i < c; ++i) v += jac[i * d + a] * hj[i * d + b];
        g[a * d + b] += v / static_cast<double>(n);
      }
  }
  return g;
}

// Offsets of each parameter block in the flat vector, block order.
inline std::vector<std::size_t> block_offsets(const Network& net) {
  std::vector<std::size_t> off{0};
  for (std::size_t i = 0; i < net.size(); ++i)
    for (const auto& p : net.layer(i).params()) off.push_back(off.back() + p.size());
  return off;
}

// Dense [rows*cols] Kronecker product, row-major.
inline std::vector<double> kron(const Tensor& a, const Tensor& b) {
  const std::size_t p = a.dim(0), q = b.dim(0);
  std::vector<double> out(p * q * p * q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k < q; ++k)
        for (std::size_t l = 0; l < q; ++l)
          out[(i * q + k) * (p * q) + (j * q + l)] = a[i * p + j] * b[k * q + l];
  return out;
}

template <class... L>
Network make_net(LossKind loss, std::unique_ptr<L>... layers) {
  std::vector<std::unique_ptr<Layer>> v;
  (v.push_back(std::move(layers)), ...);
  return Network(std::move(v), loss);
}

inline ConvGeometry conv3x3(std::size_t pad = 1, std::size_t stride = 1) {
  ConvGeometry g;
  g.kernel_h = g.kernel_w = 3;
  g.pad_h = g.pad_w = pad;
  g.stride_h = g.stride_w = stride;
  return g;
}

}  // namespace oracle
