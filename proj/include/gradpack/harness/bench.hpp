#pragma once

#include <string>
#include <vector>

#include "gradpack/extensions.hpp"
#include "gradpack/harness/models.hpp"
#include "gradpack/harness/record.hpp"

namespace gradpack::harness {

struct BenchConfig {
  std::string model = "cnn-small";
  ModelSize size;
  std::size_t batch_size = 128;
  std::vector<Extension> extensions;
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  std::uint64_t seed = 0;
};

// Random N(0, 1) inputs and uniform labels (or N(0, 1) targets for mse).
struct Batch {
  Tensor x;
  Targets y;
};
Batch random_batch(const std::string& model, const ModelSize& size, std::size_t n,
                   std::uint64_t seed);

// Times, per repeat and interleaved: the gradient-only backward sweep, the
// sweep with the extensions, and when BatchGrad is requested the vectorized
// forward+backward against the for-loop over samples. Forward passes of
// the first two are not timed. Ratios divide medians.
RunRecord bench_overhead(const BenchConfig& cfg);

// Vectorized BatchGrad against the for-loop for each batch size.
std::vector<RunRecord> bench_batchgrad(const BenchConfig& cfg,
                                       const std::vector<std::size_t>& batch_sizes);

}  // namespace gradpack::harness
