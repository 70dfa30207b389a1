#include "gradpack/harness/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <atomic>
#include <exception>
#include <thread>

#include "gradpack/engine.hpp"
#include "gradpack/errors.hpp"

namespace gradpack::harness {

namespace {

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t c = t.dim(1);
  const double* p = t.data() + row * c;
  return static_cast<std::size_t>(std::max_element(p, p + c) - p);
}

struct Eval {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean loss and accuracy over rows, in chunks to bound memory.
Eval evaluate(const Network& net, const Tensor& x, const Labels& y,
              const std::vector<std::size_t>& rows) {
  if (rows.empty()) return {0.0, 0.0};
  constexpr std::size_t chunk = 512;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < rows.size(); start += chunk) {
    const std::span<const std::size_t> part(rows.data() + start,
                                            std::min(chunk, rows.size() - start));
    const Tensor xb = take_samples(x, part);
    Labels yb;
    for (auto r : part) yb.push_back(y[r]);
    const Tensor out = net.predict(xb);
    const LossOutput l = cross_entropy(out, yb);
    loss += l.value * static_cast<double>(part.size());
    for (std::size_t i = 0; i < part.size(); ++i) correct += argmax_row(out, i) == yb[i];
  }
  const auto n = static_cast<double>(rows.size());
  return {loss / n, static_cast<double>(correct) / n};
}

// Makes the input layout match the model: flat models take flattened
// images, image models refuse flat data.
Tensor fit_input(const std::string& model, ModelSize& size, const Dataset& data) {
  const Shape& s = data.x.shape();
  size.classes = data.classes;
  if (image_model(model)) {
    if (s.size() != 4)
      throw ConfigurationError(model + " needs image data, got " + shape_string(s));
    size.channels = s[1];
    size.height = s[2];
    size.width = s[3];
    return data.x;
  }
  size.features = data.x.sample_size();
  return data.x.reshaped({s[0], size.features});
}

}  // namespace

RunRecord train(const TrainConfig& cfg, const Dataset& data) {
  cfg.optimizer.validate();
  if (cfg.batch_size == 0) throw ConfigurationError("batch size must be positive");
  if (data.train.empty()) throw ConfigurationError("no training rows");

  ModelSize size = cfg.size;
  size.loss = LossKind::cross_entropy;
  const Tensor x = fit_input(cfg.model, size, data);
  Network net = make_model(cfg.model, size);
  Rng rng(cfg.seed);
  net.init_params(rng);

  RunRecord rec;
  rec.command = "train";
  rec.model = cfg.model;
  rec.data = cfg.data_label;
  rec.batch_size = cfg.batch_size;
  rec.extensions = {std::string(extension_name(cfg.optimizer.curvature))};
  rec.seed = cfg.seed;
  rec.hyper = Hyperparameters{cfg.optimizer.alpha, cfg.optimizer.lambda, cfg.optimizer.eta,
                              std::string(extension_name(cfg.optimizer.curvature))};
  rec.values["num_params"] = static_cast<double>(net.num_params());

  auto record_epoch = [&](std::size_t epoch) {
    const Eval tr = evaluate(net, x, data.y, data.train);
    const Eval va = evaluate(net, x, data.y, data.validation);
    rec.epochs.push_back({epoch, tr.loss, tr.accuracy, va.accuracy});
    return std::isfinite(tr.loss);
  };

  if (!record_epoch(0)) {
    rec.status = "diverged";
    return rec;
  }
  const Extension curvature[] = {curvature_extension(cfg.optimizer)};
  std::vector<std::size_t> order = data.train;
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start,
                                              std::min(cfg.batch_size, order.size() - start));
      Labels yb;
      for (auto r : rows) yb.push_back(data.y[r]);
      BackwardState state = forward_cached(net, take_samples(x, rows), yb);
      if (!std::isfinite(state.loss.value)) {
        rec.status = "diverged";
        return rec;
      }
      BackwardOptions opt;
      opt.seed = cfg.seed * 1000003ULL + step++;
      opt.mc_samples = cfg.mc_samples;
      const BackwardResult result = backward(net, std::move(state), curvature, opt);
      try {
        apply_step(net, result, cfg.optimizer);
      } catch (const DampingError&) {
        rec.status = "damping_error";
        rec.values["failed_epoch"] = static_cast<double>(epoch);
        return rec;
      }
    }
    if (!record_epoch(epoch)) {
      rec.status = "diverged";
      return rec;
    }
  }
  rec.values["final_validation_accuracy"] = rec.epochs.back().validation_accuracy;
  rec.values["final_train_loss"] = rec.epochs.back().train_loss;
  return rec;
}

std::optional<std::size_t> pick_best(const std::vector<RunRecord>& cells) {
  std::optional<std::size_t> best;
  double top = -1.0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].status != "ok") continue;
    const auto it = cells[i].values.find("final_validation_accuracy");
    if (it == cells[i].values.end()) continue;
    const double acc = it->second;
    if (acc > top) {
      top = acc;
      best = i;
    }
  }
  return best;
}

GridResult gridsearch(const GridConfig& cfg, const Dataset& data) {
  if (cfg.alphas.empty() || cfg.lambdas.empty()) throw ConfigurationError("empty grid");
  if (cfg.jobs == 0) throw ConfigurationError("jobs must be positive");
  GridResult out;
  const std::size_t nl = cfg.lambdas.size(), total = cfg.alphas.size() * nl;
  out.cells.resize(total);
  auto cell = [&](std::size_t k) {
    TrainConfig c = cfg.base;
    c.optimizer.alpha = cfg.alphas[k / nl];
    c.optimizer.lambda = cfg.lambdas[k % nl];
    out.cells[k] = train(c, data);
    out.cells[k].command = "gridsearch cell";
  };
  if (cfg.jobs == 1) {
    for (std::size_t k = 0; k < total; ++k) cell(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(cfg.jobs);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(cfg.jobs, total); ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t k; (k = next++) < total;) cell(k);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  out.best = pick_best(out.cells);
  if (!out.best) return out;
  const auto& h = *out.cells[*out.best].hyper;
  for (auto seed : cfg.seeds) {
    TrainConfig c = cfg.base;
    c.optimizer.alpha = h.alpha;
    c.optimizer.lambda = h.lambda;
    c.seed = seed;
    RunRecord r = train(c, data);
    r.command = "gridsearch rerun";
    out.reruns.push_back(std::move(r));
  }
  return out;
}

}  // namespace gradpack::harness
