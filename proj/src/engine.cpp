#include "gradpack/engine.hpp"

#include <algorithm>
#include <cctype>

#include "gradpack/errors.hpp"
#include "gradpack/first_order.hpp"
#include "gradpack/linalg.hpp"
#include "gradpack/second_order.hpp"

namespace gradpack {

// ------------------------------------------------------------ extension names

std::string_view extension_name(Extension e) {
  switch (e) {
    case Extension::batch_grad: return "batch_grad";
    case Extension::batch_l2: return "batch_l2";
    case Extension::sum_grad_squared: return "sum_grad_squared";
    case Extension::variance: return "variance";
    case Extension::diag_ggn: return "diag_ggn";
    case Extension::diag_ggn_mc: return "diag_ggn_mc";
    case Extension::kfac: return "kfac";
    case Extension::kflr: return "kflr";
    case Extension::kfra: return "kfra";
    case Extension::diag_hessian: return "diag_hessian";
  }
  return "unknown";
}

namespace {
std::string squash(std::string_view s) {
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c)))
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}
}  // namespace

Extension parse_extension(std::string_view name) {
  const std::string key = squash(name);
  for (auto e : kAllExtensions)
    if (squash(extension_name(e)) == key) return e;
  if (key == "secondmoment") return Extension::sum_grad_squared;
  if (key == "diaghess") return Extension::diag_hessian;
  throw ConfigurationError("unknown extension '" + std::string(name) + "'");
}

std::vector<Extension> parse_extension_list(std::string_view csv) {
  std::vector<Extension> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto end = std::min(csv.find(',', start), csv.size());
    const auto item = csv.substr(start, end - start);
    if (!squash(item).empty()) out.push_back(parse_extension(item));
    start = end + 1;
  }
  return out;
}

// ------------------------------------------------------------------ results

const BlockResult& BackwardResult::at(std::size_t layer, std::size_t block) const {
  for (const auto& b : blocks)
    if (b.layer == layer && b.block == block) return b;
  throw ConfigurationError("no parameter block " + std::to_string(block) + " on layer " +
                           std::to_string(layer));
}

std::vector<Tensor> BackwardResult::gradients() const {
  std::vector<Tensor> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(b.grad);
  return out;
}

// ------------------------------------------------------------------ forward

BackwardState forward_cached(const Network& net, const Tensor& input, const Targets& targets) {
  BackwardState state;
  state.activations.reserve(net.size() + 1);
  state.activations.push_back(input);
  for (std::size_t i = 0; i < net.size(); ++i) {
    try {
      state.activations.push_back(net.layer(i).forward(state.activations.back()));
    } catch (const Error& e) {
      throw ConfigurationError("layer " + std::to_string(i) + " (" + net.layer(i).kind() +
                               "): " + e.what());
    }
  }
  state.loss = evaluate_loss(net.loss(), state.activations.back(), targets);
  return state;
}

// ----------------------------------------------------------------- backward

namespace {

struct Needs {
  bool any[std::size(kAllExtensions)] = {};

  bool has(Extension e) const { return any[static_cast<std::size_t>(e)]; }
  bool exact() const {
    return has(Extension::diag_ggn) || has(Extension::kflr) || has(Extension::diag_hessian);
  }
  bool sampled() const { return has(Extension::diag_ggn_mc) || has(Extension::kfac); }
  bool kfra() const { return has(Extension::kfra); }
  bool residuals() const { return has(Extension::diag_hessian); }
};

// Re-labels failures with the layer index and the extension that asked.
template <class F>
auto guarded(const Layer& layer, std::size_t index, Extension e, F&& f) {
  try {
    return f();
  } catch (const UnsupportedOperation& err) {
    throw UnsupportedOperation("layer " + std::to_string(index) + " (" + layer.kind() +
                               ") does not support " + std::string(extension_name(e)) + ": " +
                               err.what());
  }
}

Tensor to_param_shape(Tensor t, const ParamBlock& block) {
  return std::move(t).reshaped(block.value.shape());
}

}  // namespace

BackwardResult backward(const Network& net, BackwardState state,
                        std::span<const Extension> extensions, const BackwardOptions& options) {
  if (state.activations.size() != net.size() + 1) {
    throw ConfigurationError("backward state does not belong to this network");
  }
  Needs needs;
  for (auto e : extensions) needs.any[static_cast<std::size_t>(e)] = true;

  BackwardResult result;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto params = net.layer(i).params();
    for (std::size_t b = 0; b < params.size(); ++b) {
      BlockResult r;
      r.layer = i;
      r.block = b;
      r.name = std::to_string(i) + "." + params[b].name;
      result.blocks.push_back(std::move(r));
    }
  }
  auto block_result = [&](std::size_t layer, std::size_t block) -> BlockResult& {
    for (auto& r : result.blocks)
      if (r.layer == layer && r.block == block) return r;
    throw ConfigurationError("missing block");
  };

  const LossOutput& loss = state.loss;
  const std::size_t n = loss.batch();
  Tensor grad_out = loss.grad.reshaped({n, loss.classes(), 1});

  std::optional<SqrtFactor> exact;
  if (needs.exact()) exact = SqrtFactor{loss.hess_sqrt, 1};
  std::optional<SqrtFactor> sampled;
  if (needs.sampled()) {
    Rng rng(options.seed);
    sampled = mc_sample(loss, rng, options.mc_samples);
  }
  std::optional<Tensor> gbar;
  if (needs.kfra()) {
    result.kfra_gbar.resize(net.size() + 1);
    gbar = second_order::mean_outer(loss.hess_sqrt);
    result.kfra_gbar[net.size()] = *gbar;
  }
  // Residual factors of the Hessian recursion, appended as the sweep passes
  // curved element-wise layers. The loss factor is `exact`.
  std::vector<SqrtFactor> residuals;

  for (std::size_t i = net.size(); i-- > 0;) {
    const Layer& layer = net.layer(i);
    const LayerIO io{state.activations[i], state.activations[i + 1]};
    const auto params = layer.params();

    for (std::size_t b = 0; b < params.size(); ++b) {
      BlockResult& out = block_result(i, b);
      if (needs.has(Extension::batch_grad)) {
        out.batch_grad = guarded(layer, i, Extension::batch_grad, [&] {
          return first_order::batch_grad(layer, io, b, grad_out);
        });
        // The summed product adds the same per-sample terms in the same
        // order, so the row sum is the gradient bit for bit.
        out.grad = to_param_shape(reduce(*out.batch_grad, {0}, ReduceOp::sum), params[b]);
      } else {
        try {
          out.grad = to_param_shape(
              layer.param_jac_t_mat_prod(io, b, grad_out, true), params[b]);
        } catch (const UnsupportedOperation& err) {
          throw UnsupportedOperation("layer " + std::to_string(i) + " (" + layer.kind() +
                                     ") cannot produce a gradient: " + err.what());
        }
      }
      const bool want_l2 = needs.has(Extension::batch_l2);
      const bool want_sgs =
          needs.has(Extension::sum_grad_squared) || needs.has(Extension::variance);
      if (want_l2 || want_sgs) {
        auto m = guarded(layer, i, Extension::sum_grad_squared, [&] {
          return first_order::moments(layer, io, b, grad_out, want_l2, want_sgs);
        });
        if (want_l2) out.batch_l2 = std::move(m.batch_l2);
        if (needs.has(Extension::variance)) {
          out.variance = to_param_shape(
              first_order::variance(*m.sum_grad_squared, out.grad), params[b]);
        }
        if (needs.has(Extension::sum_grad_squared)) {
          out.sum_grad_squared = to_param_shape(std::move(*m.sum_grad_squared), params[b]);
        }
      }

      if (needs.has(Extension::diag_ggn)) {
        out.diag_ggn = to_param_shape(guarded(layer, i, Extension::diag_ggn, [&] {
          return second_order::diag_ggn(layer, io, b, *exact);
        }), params[b]);
      }
      if (needs.has(Extension::diag_ggn_mc)) {
        out.diag_ggn_mc = to_param_shape(guarded(layer, i, Extension::diag_ggn_mc, [&] {
          return second_order::diag_ggn_mc(layer, io, b, *sampled);
        }), params[b]);
      }
      if (needs.has(Extension::diag_hessian)) {
        out.diag_hessian = to_param_shape(guarded(layer, i, Extension::diag_hessian, [&] {
          Tensor d = second_order::diag_from_factor(layer, io, b, *exact);
          d += second_order::diag_hessian(layer, io, b, residuals);
          return d;
        }), params[b]);
      }
      if (needs.has(Extension::kfac)) {
        out.kfac = guarded(layer, i, Extension::kfac,
                           [&] { return second_order::kfac(layer, io, b, *sampled); });
      }
      if (needs.has(Extension::kflr)) {
        out.kflr = guarded(layer, i, Extension::kflr,
                           [&] { return second_order::kflr(layer, io, b, *exact); });
      }
      if (needs.has(Extension::kfra)) {
        out.kfra = guarded(layer, i, Extension::kfra,
                           [&] { return second_order::kfra(layer, io, b, *gbar); });
      }
    }

    if (i == 0) break;

    std::vector<SqrtFactor> fresh;
    if (needs.residuals() && layer.has_curvature()) {
      // Residuals use the per-sample gradient of l_n, not of l_n / N.
      Tensor unscaled = grad_out.reshaped({n, layer.out_dim()});
      unscaled *= static_cast<double>(n);
      fresh = second_order::residual_factors(layer, io, unscaled);
    }

    grad_out = layer.jac_t_mat_prod(io, grad_out);
    if (exact) exact->data = layer.jac_t_mat_prod(io, exact->data);
    if (sampled) sampled->data = layer.jac_t_mat_prod(io, sampled->data);
    for (auto& f : residuals) f.data = layer.jac_t_mat_prod(io, f.data);
    for (auto& f : fresh) residuals.push_back(std::move(f));
    if (gbar) {
      gbar = guarded(layer, i, Extension::kfra,
                     [&] { return second_order::propagate_gbar(layer, io, *gbar); });
      result.kfra_gbar[i] = *gbar;
    }

    state.activations[i + 1] = Tensor();
  }
  return result;
}

// ------------------------------------------------------------ for-loop oracle

Tensor take_samples(const Tensor& x, std::span<const std::size_t> rows) {
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out(shape);
  const std::size_t s = x.sample_size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = x.sample(rows[i]);
    std::copy(src.begin(), src.end(), out.data() + i * s);
  }
  return out;
}

Targets take_samples(const Targets& y, std::span<const std::size_t> rows) {
  if (const auto* labels = std::get_if<Labels>(&y)) {
    Labels out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(labels->at(r));
    return out;
  }
  return take_samples(std::get<Tensor>(y), rows);
}

std::vector<Tensor> for_loop_batch_grad(const Network& net, const Tensor& input,
                                        const Targets& targets) {
  const std::size_t n = input.dim(0);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < net.size(); ++i)
    for (const auto& p : net.layer(i).params()) out.emplace_back(Shape{n, p.size()});

  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t row[] = {s};
    BackwardResult r =
        backward(net, forward_cached(net, take_samples(input, row), take_samples(targets, row)),
                 {});
    for (std::size_t b = 0; b < r.blocks.size(); ++b) {
      const Tensor& g = r.blocks[b].grad;
      double* dst = out[b].data() + s * g.numel();
      for (std::size_t j = 0; j < g.numel(); ++j) dst[j] = g[j] / static_cast<double>(n);
    }
  }
  return out;
}

}  // namespace gradpack
