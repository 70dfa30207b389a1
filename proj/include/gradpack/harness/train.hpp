#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gradpack/harness/data.hpp"
#include "gradpack/harness/models.hpp"
#include "gradpack/harness/record.hpp"
#include "gradpack/optimizer.hpp"

namespace gradpack::harness {

struct TrainConfig {
  std::string model = "logreg";
  ModelSize size;  // input and class sizes are taken from the data
  PreconditionerConfig optimizer;
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::size_t mc_samples = 1;
  std::string data_label;
};

// Epoch 0 holds the metrics before the first step. Training stops with
// status "diverged" on a non-finite loss and "damping_error" when the
// preconditioner cannot be applied.
RunRecord train(const TrainConfig& cfg, const Dataset& data);

struct GridConfig {
  TrainConfig base;
  std::vector<double> alphas = {1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> lambdas = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  std::vector<std::uint64_t> seeds = {0};
  // Cells trained concurrently. Each cell owns its network and engine
  // state, so results do not depend on this.
  std::size_t jobs = 1;
};

struct GridResult {
  std::vector<RunRecord> cells;          // alpha-major order, trained with base.seed
  std::optional<std::size_t> best;       // index into cells
  std::vector<RunRecord> reruns;         // best cell over seeds
};

// Best cell: highest final validation accuracy among cells with status
// "ok"; the first such cell in grid order wins ties.
GridResult gridsearch(const GridConfig& cfg, const Dataset& data);
std::optional<std::size_t> pick_best(const std::vector<RunRecord>& cells);

}  // namespace gradpack::harness
