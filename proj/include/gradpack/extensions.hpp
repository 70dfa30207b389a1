#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradpack/tensor.hpp"

namespace gradpack {

enum class Extension {
  batch_grad,
  batch_l2,
  sum_grad_squared,
  variance,
  diag_ggn,
  diag_ggn_mc,
  kfac,
  kflr,
  kfra,
  diag_hessian,
};

inline constexpr Extension kAllExtensions[] = {
    Extension::batch_grad, Extension::batch_l2,    Extension::sum_grad_squared,
    Extension::variance,   Extension::diag_ggn,    Extension::diag_ggn_mc,
    Extension::kfac,       Extension::kflr,        Extension::kfra,
    Extension::diag_hessian};

std::string_view extension_name(Extension e);
// Accepts snake_case, kebab-case, or CamelCase spellings ("DiagGGN-MC").
Extension parse_extension(std::string_view name);
// Comma-separated list; empty string gives an empty list.
std::vector<Extension> parse_extension_list(std::string_view csv);

// Block approximation G(theta) ~ A (x) B in the [in x out] layout of the
// weight, i.e. the weight stored [out x in] sees B (x) A. Bias blocks carry
// a = [[1]] and the full bias GGN in b.
struct KroneckerPair {
  Tensor a;
  Tensor b;
};

// Everything the backward sweep produced for one parameter block.
struct BlockResult {
  std::size_t layer = 0;
  std::size_t block = 0;
  std::string name;
  Tensor grad;  // mean-loss gradient, shaped like the parameter

  std::optional<Tensor> batch_grad;        // [N x param shape], rows carry 1/N
  std::optional<Tensor> batch_l2;          // [N]
  std::optional<Tensor> sum_grad_squared;  // param shape
  std::optional<Tensor> variance;          // param shape
  std::optional<Tensor> diag_ggn;
  std::optional<Tensor> diag_ggn_mc;
  std::optional<Tensor> diag_hessian;
  std::optional<KroneckerPair> kfac;
  std::optional<KroneckerPair> kflr;
  std::optional<KroneckerPair> kfra;
};

}  // namespace gradpack
