#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gradpack/loss.hpp"

namespace gradpack::harness {

struct Dataset {
  Tensor x;  // [N x features] or [N x C x H x W]
  Labels y;
  std::size_t classes = 0;
  std::vector<std::size_t> train;  // row indices
  std::vector<std::size_t> validation;

  std::size_t size() const { return y.size(); }
};

// MNIST-style IDX pair. Images become [N x 1 x rows x cols] with bytes / 255.
// Throws ParseError naming the file for a bad magic number, a truncated
// payload or an image/label count mismatch.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// k points per class from N(center_c, I) in d dimensions. Centers sit on a
// simplex scaled by `spread`, so d >= classes is required. Deterministic
// for a seed; rows are shuffled.
Dataset synth_blobs(std::size_t classes, std::size_t dims, std::size_t per_class,
                    std::uint64_t seed, double spread = 5.0);

// Deterministic shuffled split; validation gets round(fraction * N) rows.
void split(Dataset& data, double validation_fraction, std::uint64_t seed);

// "idx:images,labels" or "blobs:C,d,k"
Dataset load_source(const std::string& spec, std::uint64_t seed);

}  // namespace gradpack::harness
