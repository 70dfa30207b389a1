#include "gradpack/harness/bench.hpp"

#include <chrono>
#include <random>

#include "gradpack/engine.hpp"
#include "gradpack/errors.hpp"

namespace gradpack::harness {

namespace {

using Clock = std::chrono::steady_clock;

template <class F>
double seconds(F&& f) {
  const auto t0 = Clock::now();
  f();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double sum_squares(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

// Deterministic fingerprints of every quantity the sweep produced.
void checksums(const BackwardResult& r, std::map<std::string, double>& out) {
  auto add = [&](const std::string& key, double v) { out[key] += v; };
  for (const auto& b : r.blocks) {
    add("grad", sum_squares(b.grad));
    if (b.batch_grad) add("batch_grad", sum_squares(*b.batch_grad));
    if (b.batch_l2) add("batch_l2", sum_squares(*b.batch_l2));
    if (b.sum_grad_squared) add("sum_grad_squared", sum_squares(*b.sum_grad_squared));
    if (b.variance) add("variance", sum_squares(*b.variance));
    if (b.diag_ggn) add("diag_ggn", sum_squares(*b.diag_ggn));
    if (b.diag_ggn_mc) add("diag_ggn_mc", sum_squares(*b.diag_ggn_mc));
    if (b.diag_hessian) add("diag_hessian", sum_squares(*b.diag_hessian));
    for (const auto& [key, pair] : {std::pair{"kfac", &b.kfac}, std::pair{"kflr", &b.kflr},
                                    std::pair{"kfra", &b.kfra}}) {
      if (*pair) add(key, sum_squares((*pair)->a) + sum_squares((*pair)->b));
    }
  }
}

std::vector<std::string> names(const std::vector<Extension>& exts) {
  std::vector<std::string> out;
  for (auto e : exts) out.emplace_back(extension_name(e));
  return out;
}

bool wants_batch_grad(const std::vector<Extension>& exts) {
  for (auto e : exts)
    if (e == Extension::batch_grad) return true;
  return false;
}

}  // namespace

Batch random_batch(const std::string& model, const ModelSize& size, std::size_t n,
                   std::uint64_t seed) {
  Rng rng(seed ^ 0x5851f42d4c957f2dULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  Shape shape = sample_shape(model, size);
  shape.insert(shape.begin(), n);
  Batch b;
  b.x = Tensor(shape);
  for (double& v : b.x.values()) v = normal(rng);
  if (size.loss == LossKind::mse) {
    Tensor t({n, size.classes});
    for (double& v : t.values()) v = normal(rng);
    b.y = std::move(t);
  } else {
    std::uniform_int_distribution<std::size_t> label(0, size.classes - 1);
    Labels y(n);
    for (auto& v : y) v = label(rng);
    b.y = std::move(y);
  }
  return b;
}

RunRecord bench_overhead(const BenchConfig& cfg) {
  if (cfg.repeats == 0) throw ConfigurationError("repeats must be positive");
  Network net = make_model(cfg.model, cfg.size);
  Rng init(cfg.seed);
  net.init_params(init);
  const Batch batch = random_batch(cfg.model, cfg.size, cfg.batch_size, cfg.seed);
  const bool loop = wants_batch_grad(cfg.extensions);
  const BackwardOptions options{cfg.seed, 1};

  RunRecord rec;
  rec.command = "bench overhead";
  rec.model = cfg.model;
  rec.batch_size = cfg.batch_size;
  rec.extensions = names(cfg.extensions);
  rec.repeats = cfg.repeats;
  rec.seed = cfg.seed;
  rec.values["num_params"] = static_cast<double>(net.num_params());

  {
    // Fails early on unsupported combinations and fixes the checksums.
    BackwardState state = forward_cached(net, batch.x, batch.y);
    rec.values["loss"] = state.loss.value;
    checksums(backward(net, std::move(state), cfg.extensions, options), rec.values);
  }

  std::vector<double> grad_t, ext_t, vec_t, loop_t;
  const std::size_t total = cfg.warmup + cfg.repeats;
  for (std::size_t r = 0; r < total; ++r) {
    const bool keep = r >= cfg.warmup;
    BackwardState s1 = forward_cached(net, batch.x, batch.y);
    const double a = seconds([&] { backward(net, std::move(s1), {}, options); });
    BackwardState s2 = forward_cached(net, batch.x, batch.y);
    const double b =
        seconds([&] { backward(net, std::move(s2), cfg.extensions, options); });
    if (keep) {
      grad_t.push_back(a);
      ext_t.push_back(b);
    }
    if (loop) {
      const Extension bg[] = {Extension::batch_grad};
      const double v = seconds([&] {
        backward(net, forward_cached(net, batch.x, batch.y), bg, options);
      });
      const double l = seconds([&] { for_loop_batch_grad(net, batch.x, batch.y); });
      if (keep) {
        vec_t.push_back(v);
        loop_t.push_back(l);
      }
    }
  }
  rec.timings["gradient"] = TimingStats::from(grad_t);
  rec.timings["extended"] = TimingStats::from(ext_t);
  rec.ratios["extended/gradient"] = rec.timings["extended"].median / rec.timings["gradient"].median;
  if (loop) {
    rec.timings["batch_grad_vectorized"] = TimingStats::from(vec_t);
    rec.timings["batch_grad_for_loop"] = TimingStats::from(loop_t);
    rec.ratios["for_loop/vectorized"] =
        rec.timings["batch_grad_for_loop"].median / rec.timings["batch_grad_vectorized"].median;
  }
  return rec;
}

std::vector<RunRecord> bench_batchgrad(const BenchConfig& cfg,
                                       const std::vector<std::size_t>& batch_sizes) {
  if (batch_sizes.empty()) throw ConfigurationError("no batch sizes given");
  std::vector<RunRecord> out;
  for (std::size_t n : batch_sizes) {
    BenchConfig c = cfg;
    c.batch_size = n;
    c.extensions = {Extension::batch_grad};
    RunRecord r = bench_overhead(c);
    r.command = "bench batchgrad";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace gradpack::harness
