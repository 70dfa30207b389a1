#include "gradpack/linalg.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <string>

#include "gradpack/errors.hpp"

namespace gradpack {

namespace kernels {
namespace {

// Eight doubles per vector; loads and stores go through memcpy so no
// alignment is assumed.
typedef double v8 __attribute__((vector_size(64)));

inline v8 load(const double* p) {
  v8 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store(double* p, v8 v) { std::memcpy(p, &v, sizeof v); }

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;

// c[4 x 16] tile held in registers across the whole k loop. Each entry
// sees c + a0 b0 + a1 b1 + ... in order, like the scalar loop below.
inline void tile_4x16(std::size_t k, const double* a, std::size_t a_row, std::size_t a_col,
                      const double* b, std::size_t p, double* c) {
  v8 c00 = load(c), c01 = load(c + 8);
  v8 c10 = load(c + p), c11 = load(c + p + 8);
  v8 c20 = load(c + 2 * p), c21 = load(c + 2 * p + 8);
  v8 c30 = load(c + 3 * p), c31 = load(c + 3 * p + 8);
  for (std::size_t l = 0; l < k; ++l) {
    const double* al = a + l * a_col;
    const v8 b0 = load(b + l * p), b1 = load(b + l * p + 8);
    const double a0 = al[0], a1 = al[a_row], a2 = al[2 * a_row], a3 = al[3 * a_row];
    c00 += a0 * b0;
    c01 += a0 * b1;
    c10 += a1 * b0;
    c11 += a1 * b1;
    c20 += a2 * b0;
    c21 += a2 * b1;
    c30 += a3 * b0;
    c31 += a3 * b1;
  }
  store(c, c00);
  store(c + 8, c01);
  store(c + p, c10);
  store(c + p + 8, c11);
  store(c + 2 * p, c20);
  store(c + 2 * p + 8, c21);
  store(c + 3 * p, c30);
  store(c + 3 * p + 8, c31);
}

// One row of c against a 16-column panel.
inline void tile_1x16(std::size_t k, const double* a, std::size_t a_col, const double* b,
                      std::size_t p, double* c) {
  v8 c0 = load(c), c1 = load(c + 8);
  for (std::size_t l = 0; l < k; ++l) {
    const double av = a[l * a_col];
    c0 += av * load(b + l * p);
    c1 += av * load(b + l * p + 8);
  }
  store(c, c0);
  store(c + 8, c1);
}

}  // namespace

void gemm(std::size_t m, std::size_t k, std::size_t p, const double* a,
          std::size_t a_row, std::size_t a_col, const double* b, double* c) {
  const std::size_t p_tiled = p - p % kTileCols;
  for (std::size_t j = 0; j < p_tiled; j += kTileCols) {
    std::size_t i = 0;
    for (; i + kTileRows <= m; i += kTileRows)
      tile_4x16(k, a + i * a_row, a_row, a_col, b + j, p, c + i * p + j);
    for (; i < m; ++i) tile_1x16(k, a + i * a_row, a_col, b + j, p, c + i * p + j);
  }
  if (p_tiled == p) return;
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * p;
    const double* ar = a + i * a_row;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = ar[l * a_col];
      const double* br = b + l * p;
      for (std::size_t j = p_tiled; j < p; ++j) ci[j] += av * br[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t p, const double* a,
             const double* b, double* c) {
  if (m >= 4) {
    Tensor::Storage bt(k * p);
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t l = 0; l < k; ++l) bt[l * p + j] = b[j * k + l];
    gemm(m, k, p, a, k, 1, bt.data(), c);
    return;
  }
  // Few rows: dot products, four independent accumulators for ILP.
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * p;
    std::size_t j = 0;
    for (; j + 4 <= p; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      double s0 = ci[j], s1 = ci[j + 1], s2 = ci[j + 2], s3 = ci[j + 3];
      for (std::size_t l = 0; l < k; ++l) {
        const double av = ai[l];
        s0 += av * b0[l];
        s1 += av * b1[l];
        s2 += av * b2[l];
        s3 += av * b3[l];
      }
      ci[j] = s0;
      ci[j + 1] = s1;
      ci[j + 2] = s2;
      ci[j + 3] = s3;
    }
    for (; j < p; ++j) {
      const double* bj = b + j * k;
      double s = ci[j];
      for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

}  // namespace kernels

namespace {
void require_matrix(const Tensor& t, const char* what) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(what) + " expects a matrix, got " +
                         shape_string(t.shape()));
  }
}

[[noreturn]] void inner_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": inner dimensions of " +
                       shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                       " do not agree");
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) inner_mismatch("matmul", a, b);
  Tensor c({a.dim(0), b.dim(1)});
  kernels::gemm(a.dim(0), a.dim(1), b.dim(1), a.data(), a.dim(1), 1, b.data(), c.data());
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.dim(0) != b.dim(0)) inner_mismatch("matmul_tn", a, b);
  Tensor c({a.dim(1), b.dim(1)});
  kernels::gemm(a.dim(1), a.dim(0), b.dim(1), a.data(), 1, a.dim(1), b.data(), c.data());
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.dim(1) != b.dim(1)) inner_mismatch("matmul_nt", a, b);
  Tensor c({a.dim(0), b.dim(0)});
  kernels::gemm_nt(a.dim(0), a.dim(1), b.dim(0), a.data(), b.data(), c.data());
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

Tensor swap_last_two(const Tensor& a) {
  if (a.ndim() != 3) {
    throw DimensionError("swap_last_two expects rank 3, got " + shape_string(a.shape()));
  }
  const auto n = a.dim(0), r = a.dim(1), c = a.dim(2);
  Tensor t({n, c, r});
  for (std::size_t s = 0; s < n; ++s) {
    const double* src = a.data() + s * r * c;
    double* dst = t.data() + s * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  return t;
}

namespace {
std::size_t out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                       std::size_t pad, const char* axis) {
  if (kernel == 0 || stride == 0) {
    throw ConfigurationError(std::string("kernel and stride must be positive along ") + axis);
  }
  const std::size_t padded = in + 2 * pad;
  if (padded < kernel || (padded - kernel) % stride != 0) {
    throw ConfigurationError(std::string("window does not tile the input along ") + axis +
                             ": extent " + std::to_string(in) + ", kernel " +
                             std::to_string(kernel) + ", stride " + std::to_string(stride) +
                             ", padding " + std::to_string(pad));
  }
  return (padded - kernel) / stride + 1;
}
}  // namespace

std::size_t ConvGeometry::out_h(std::size_t in_h) const {
  return out_extent(in_h, kernel_h, stride_h, pad_h, "height");
}

std::size_t ConvGeometry::out_w(std::size_t in_w) const {
  return out_extent(in_w, kernel_w, stride_w, pad_w, "width");
}

void im2col(std::span<const double> x, std::size_t channels, std::size_t height,
            std::size_t width, const ConvGeometry& g, std::span<double> cols) {
  const std::size_t oh = g.out_h(height), ow = g.out_w(width);
  const std::size_t positions = oh * ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const double* xc = x.data() + c * height * width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        double* out = cols.data() + row * positions;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            const bool inside = iy >= 0 && ix >= 0 &&
                                iy < static_cast<std::ptrdiff_t>(height) &&
                                ix < static_cast<std::ptrdiff_t>(width);
            out[oy * ow + ox] = inside ? xc[iy * width + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(std::span<const double> cols, std::size_t channels, std::size_t height,
            std::size_t width, const ConvGeometry& g, std::span<double> x) {
  const std::size_t oh = g.out_h(height), ow = g.out_w(width);
  const std::size_t positions = oh * ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    double* xc = x.data() + c * height * width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const double* in = cols.data() + row * positions;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            xc[iy * width + ix] += in[oy * ow + ox];
          }
        }
      }
    }
  }
}

Tensor im2col(const Tensor& x, const ConvGeometry& g) {
  if (x.ndim() != 3) {
    throw DimensionError("im2col expects [C x H x W], got " + shape_string(x.shape()));
  }
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor cols({c * g.kernel_h * g.kernel_w, g.out_h(h) * g.out_w(w)});
  im2col(x.values(), c, h, w, g, cols.values());
  return cols;
}

Tensor reduce(const Tensor& x, const std::vector<std::size_t>& axes, ReduceOp op) {
  const auto rank = x.ndim();
  std::vector<bool> reduced(rank, false);
  for (auto a : axes) {
    if (a >= rank) {
      throw DimensionError("reduce axis " + std::to_string(a) + " out of range for " +
                           shape_string(x.shape()));
    }
    if (reduced[a]) throw DimensionError("reduce axis " + std::to_string(a) + " repeated");
    reduced[a] = true;
  }
  Shape out_shape;
  for (std::size_t a = 0; a < rank; ++a)
    if (!reduced[a]) out_shape.push_back(x.shape()[a]);

  const double init = op == ReduceOp::sum ? 0.0 : -std::numeric_limits<double>::infinity();
  Tensor out(out_shape, init);
  if (op == ReduceOp::max && x.numel() == 0) {
    throw DimensionError("max over an empty extent");
  }

  if (op == ReduceOp::sum && axes.size() == 1 && axes[0] == 0) {
    // Same order as the general walk, without the index bookkeeping.
    const std::size_t rows = x.shape()[0], cols = out.numel();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* src = x.data() + r * cols;
      for (std::size_t j = 0; j < cols; ++j) out[j] += src[j];
    }
    return out;
  }

  // Walk the input in row-major order, carrying the output offset along.
  std::vector<std::size_t> index(rank, 0);
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t a = rank; a-- > 0;) {
    if (!reduced[a]) {
      out_stride[a] = stride;
      stride *= x.shape()[a];
    }
  }
  std::size_t out_offset = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double& slot = out[out_offset];
    if (op == ReduceOp::sum) {
      slot += x[i];
    } else {
      slot = std::max(slot, x[i]);
    }
    for (std::size_t a = rank; a-- > 0;) {
      if (++index[a] < x.shape()[a]) {
        out_offset += out_stride[a];
        break;
      }
      out_offset -= out_stride[a] * (x.shape()[a] - 1);
      index[a] = 0;
    }
  }
  return out;
}

}  // namespace gradpack
