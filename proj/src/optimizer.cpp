#include "gradpack/optimizer.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "gradpack/errors.hpp"
#include "gradpack/linalg.hpp"

namespace gradpack {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatrixRM>;

void PreconditionerConfig::validate() const {
  // alpha = 0 is accepted as a no-op step (evaluation runs).
  if (!(alpha >= 0.0) || !std::isfinite(alpha))
    throw ConfigurationError("learning rate must be >= 0, got " + std::to_string(alpha));
  if (!(lambda >= 0.0)) throw ConfigurationError("damping must be >= 0");
  if (!(eta >= 0.0)) throw ConfigurationError("l2 strength must be >= 0");
  switch (curvature) {
    case Extension::diag_ggn:
    case Extension::diag_ggn_mc:
    case Extension::kfac:
    case Extension::kflr:
    case Extension::kfra:
      return;
    default:
      throw ConfigurationError(std::string(extension_name(curvature)) +
                               " cannot precondition the optimizer");
  }
}

bool PreconditionerConfig::kronecker() const {
  return curvature == Extension::kfac || curvature == Extension::kflr ||
         curvature == Extension::kfra;
}

Extension curvature_extension(const PreconditionerConfig& cfg) { return cfg.curvature; }

void step_diagonal(Tensor& param, const Tensor& grad, const Tensor& diag,
                   const PreconditionerConfig& cfg) {
  if (grad.numel() != param.numel() || diag.numel() != param.numel()) {
    throw DimensionError("step_diagonal: parameter " + shape_string(param.shape()) +
                         ", gradient " + shape_string(grad.shape()) + ", curvature " +
                         shape_string(diag.shape()));
  }
  const double damp = cfg.lambda + cfg.eta;
  for (std::size_t j = 0; j < param.numel(); ++j) {
    const double denom = diag[j] + damp;
    if (!(denom > 0.0)) {
      throw DampingError("non-positive preconditioner entry " + std::to_string(denom) +
                         " at index " + std::to_string(j));
    }
    param[j] -= cfg.alpha * (grad[j] + cfg.eta * param[j]) / denom;
  }
}

namespace {

double trace(const Tensor& m) {
  double t = 0.0;
  for (std::size_t i = 0; i < m.dim(0); ++i) t += m[i * m.dim(0) + i];
  return t;
}

void check_square(const Tensor& m, const char* what) {
  if (m.ndim() != 2 || m.dim(0) != m.dim(1))
    throw DimensionError(std::string(what) + " must be square, got " + shape_string(m.shape()));
}

// V diag(1 / (lambda_i + c)) V^T
MatrixRM damped_inverse(const Tensor& m, double c, const char* what) {
  check_square(m, what);
  Eigen::SelfAdjointEigenSolver<MatrixRM> eig(ConstMap(m.data(), m.dim(0), m.dim(1)));
  if (eig.info() != Eigen::Success)
    throw DampingError(std::string("eigendecomposition of ") + what + " failed");
  Eigen::VectorXd shifted = eig.eigenvalues().array() + c;
  const double floor = 1e-14 * std::max(1.0, eig.eigenvalues().cwiseAbs().maxCoeff());
  if (shifted.minCoeff() <= floor) {
    throw DampingError(std::string("damped ") + what + " is singular (smallest eigenvalue " +
                       std::to_string(shifted.minCoeff()) + ")");
  }
  const auto& v = eig.eigenvectors();
  return v * shifted.cwiseInverse().asDiagonal() * v.transpose();
}

Tensor from_eigen(const MatrixRM& m) {
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                std::span<const double>(m.data(), m.size()));
}

}  // namespace

std::optional<double> kronecker_pi(const Tensor& a, const Tensor& b) {
  check_square(a, "A");
  check_square(b, "B");
  const double ta = trace(a), tb = trace(b);
  if (!(ta > 0.0) || !(tb > 0.0)) return std::nullopt;
  return std::sqrt(ta * static_cast<double>(b.dim(0)) / (static_cast<double>(a.dim(0)) * tb));
}

KronSolve kron_inverse_apply(const KroneckerPair& pair, const Tensor& g, double lam_plus_eta) {
  if (!(lam_plus_eta > 0.0)) throw DampingError("kron_inverse_apply needs lambda + eta > 0");
  check_square(pair.a, "A");
  check_square(pair.b, "B");
  const std::size_t p = pair.a.dim(0), q = pair.b.dim(0);
  if (g.numel() != p * q) {
    throw DimensionError("kron_inverse_apply: gradient " + shape_string(g.shape()) +
                         " does not fit factors " + std::to_string(p) + " x " +
                         std::to_string(q));
  }
  KronSolve out;
  if (auto pi = kronecker_pi(pair.a, pair.b)) {
    out.pi = *pi;
  } else {
    out.pi = 1.0;
    out.pi_fallback = true;
  }
  const double root = std::sqrt(lam_plus_eta);
  const MatrixRM ai = damped_inverse(pair.a, out.pi * root, "A");
  const MatrixRM bi = damped_inverse(pair.b, root / out.pi, "B");
  const MatrixRM u = ai * ConstMap(g.data(), p, q) * bi;
  out.update = from_eigen(u);
  return out;
}

Tensor damped_solve(const Tensor& m, const Tensor& v, double c) {
  check_square(m, "matrix");
  if (v.numel() != m.dim(0))
    throw DimensionError("damped_solve: vector " + shape_string(v.shape()) + " vs matrix " +
                         shape_string(m.shape()));
  const MatrixRM inv = damped_inverse(m, c, "matrix");
  const Eigen::VectorXd x = inv * Eigen::Map<const Eigen::VectorXd>(v.data(), v.numel());
  return Tensor(v.shape(), std::span<const double>(x.data(), x.size()));
}

bool step_kronecker(Tensor& param, const Tensor& grad, const KroneckerPair& pair,
                    const PreconditionerConfig& cfg, std::size_t layer) {
  if (grad.numel() != param.numel()) {
    throw DimensionError("step_kronecker: parameter " + shape_string(param.shape()) +
                         " and gradient " + shape_string(grad.shape()));
  }
  Tensor g = grad.reshaped({grad.numel()});
  for (std::size_t j = 0; j < g.numel(); ++j) g[j] += cfg.eta * param[j];
  const double c = cfg.lambda + cfg.eta;
  const std::size_t p = pair.a.dim(0), q = pair.b.dim(0);
  bool fallback = false;
  Tensor update;
  try {
    if (p == 1 && pair.a[0] == 1.0 && q == g.numel() && param.ndim() == 1) {
      update = damped_solve(pair.b, g, c);
    } else {
      // [out x in] -> [in x out]
      Tensor gt = transpose(std::move(g).reshaped({q, p}));
      KronSolve s = kron_inverse_apply(pair, gt, c);
      fallback = s.pi_fallback;
      update = transpose(s.update);
    }
  } catch (const DampingError& e) {
    throw DampingError("layer " + std::to_string(layer) + ": " + e.what());
  }
  for (std::size_t j = 0; j < param.numel(); ++j) param[j] -= cfg.alpha * update[j];
  return fallback;
}

StepReport apply_step(Network& net, const BackwardResult& result,
                      const PreconditionerConfig& cfg) {
  cfg.validate();
  StepReport report;
  for (const BlockResult& r : result.blocks) {
    Tensor& param = net.layer(r.layer).params()[r.block].value;
    auto missing = [&] {
      return ConfigurationError("no " + std::string(extension_name(cfg.curvature)) +
                                " curvature for block " + r.name);
    };
    switch (cfg.curvature) {
      case Extension::diag_ggn:
        if (!r.diag_ggn) throw missing();
        step_diagonal(param, r.grad, *r.diag_ggn, cfg);
        break;
      case Extension::diag_ggn_mc:
        if (!r.diag_ggn_mc) throw missing();
        step_diagonal(param, r.grad, *r.diag_ggn_mc, cfg);
        break;
      default: {
        const auto& pair = cfg.curvature == Extension::kfac   ? r.kfac
                           : cfg.curvature == Extension::kflr ? r.kflr
                                                              : r.kfra;
        if (!pair) throw missing();
        if (step_kronecker(param, r.grad, *pair, cfg, r.layer))
          report.warnings.push_back("block " + r.name + ": factor trace not positive, pi = 1");
      }
    }
  }
  return report;
}

}  // namespace gradpack
