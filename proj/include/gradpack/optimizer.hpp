#pragma once

#include <string>
#include <vector>

#include "gradpack/engine.hpp"
#include "gradpack/extensions.hpp"
#include "gradpack/network.hpp"

namespace gradpack {

// theta <- theta - alpha * [G + (lambda + eta) I]^-1 (grad + eta * theta)
struct PreconditionerConfig {
  double alpha = 1e-3;   // learning rate
  double lambda = 1e-3;  // damping
  double eta = 0.0;      // l2 strength
  Extension curvature = Extension::diag_ggn;

  // Throws ConfigurationError for alpha < 0, negative lambda/eta, or a
  // curvature that is not DiagGGN, DiagGGN-MC, KFAC, KFLR or KFRA.
  void validate() const;
  bool kronecker() const;
};

// Elementwise update of one block, in place. DampingError if a denominator
// is not positive.
void step_diagonal(Tensor& param, const Tensor& grad, const Tensor& diag,
                   const PreconditionerConfig& cfg);

// sqrt(tr(A) dim(B) / (dim(A) tr(B))); nullopt when a trace is not positive.
std::optional<double> kronecker_pi(const Tensor& a, const Tensor& b);

struct KronSolve {
  Tensor update;   // [p x q]
  double pi = 1.0;
  bool pi_fallback = false;
};

// (A + pi sqrt(c) I)^-1 G (B + sqrt(c)/pi I)^-1 for G = g as [p x q].
KronSolve kron_inverse_apply(const KroneckerPair& pair, const Tensor& g, double lam_plus_eta);

// (M + c I)^-1 v for a symmetric M.
Tensor damped_solve(const Tensor& m, const Tensor& v, double c);

// Kronecker step of one block in place. Weights are stored [out x in] and
// transposed into the [in x out] layout of the pair. Bias blocks
// (a == [[1]]) get the exact damped solve. Returns whether pi fell back.
bool step_kronecker(Tensor& param, const Tensor& grad, const KroneckerPair& pair,
                    const PreconditionerConfig& cfg, std::size_t layer);

struct StepReport {
  std::vector<std::string> warnings;
};

// The extension the backward sweep must run for a curvature choice.
Extension curvature_extension(const PreconditionerConfig& cfg);

// One step over every block of net with the curvature in result.
StepReport apply_step(Network& net, const BackwardResult& result, const PreconditionerConfig& cfg);

}  // namespace gradpack
