#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gradpack/extensions.hpp"
#include "gradpack/loss.hpp"
#include "gradpack/network.hpp"

namespace gradpack {

// Forward caches z^(0..L) plus the evaluated loss.
struct BackwardState {
  std::vector<Tensor> activations;
  LossOutput loss;
};

struct BackwardOptions {
  std::uint64_t seed = 0;        // Monte-Carlo draws for DiagGGN-MC / KFAC
  std::size_t mc_samples = 1;
};

struct BackwardResult {
  std::vector<BlockResult> blocks;  // layer order, then block order
  // Averaged KFRA matrices G^(i) for every layer output z^(i), i = 0..L.
  // Filled only when KFRA ran; entry 0 stays empty.
  std::vector<Tensor> kfra_gbar;

  const BlockResult& at(std::size_t layer, std::size_t block) const;
  std::vector<Tensor> gradients() const;
};

BackwardState forward_cached(const Network& net, const Tensor& input, const Targets& targets);

// One sweep from the loss to the first layer. Caches in state are released
// as soon as the sweep has passed them.
BackwardResult backward(const Network& net, BackwardState state,
                        std::span<const Extension> extensions,
                        const BackwardOptions& options = {});

// N independent forward/backward passes on single samples, each gradient
// scaled by 1/N. One [N x d] tensor per parameter block, in block order.
std::vector<Tensor> for_loop_batch_grad(const Network& net, const Tensor& input,
                                        const Targets& targets);

// Sample slices of inputs/targets, keeping the batch axis.
Tensor take_samples(const Tensor& x, std::span<const std::size_t> rows);
Targets take_samples(const Targets& y, std::span<const std::size_t> rows);

}  // namespace gradpack
