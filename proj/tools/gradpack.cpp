// gradpack command line: benchmarks, training and grid search. Every
// command writes one JSON document (stdout unless --out is given).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "gradpack/errors.hpp"
#include "gradpack/harness/bench.hpp"
#include "gradpack/harness/data.hpp"
#include "gradpack/harness/train.hpp"

using namespace gradpack;
using namespace gradpack::harness;

namespace {

template <class T>
std::vector<T> parse_csv(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::istringstream one(item);
    T v;
    if (!(one >> v) || !one.eof())
      throw ConfigurationError(std::string("bad value '") + item + "' in " + what);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigurationError(std::string(what) + " is empty");
  return out;
}

void write_text(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw ConfigurationError("cannot write " + path);
  out << text;
}

void emit(const Json& doc, const std::string& path) { write_text(doc.dump(2) + "\n", path); }

struct ModelArgs {
  std::string model = "cnn-small";
  std::size_t classes = 10;
  std::size_t hidden = 64;
  std::size_t image = 28;
  std::string loss = "cross_entropy";

  void add(CLI::App* app) {
    app->add_option("--model", model, "logreg | mlp2 | cnn-small | cnn-sigmoid")
        ->check(CLI::IsMember({"logreg", "mlp2", "cnn-small", "cnn-sigmoid"}));
    app->add_option("--classes", classes, "output classes C")->check(CLI::PositiveNumber);
    app->add_option("--hidden", hidden, "hidden width")->check(CLI::PositiveNumber);
    app->add_option("--image-size", image, "square input side (features = side^2)")
        ->check(CLI::PositiveNumber);
    app->add_option("--loss", loss, "cross_entropy | mse")
        ->check(CLI::IsMember({"cross_entropy", "mse"}));
  }

  ModelSize size() const {
    ModelSize s;
    s.classes = classes;
    s.hidden = hidden;
    s.height = s.width = image;
    s.features = image * image;
    s.loss = loss == "mse" ? LossKind::mse : LossKind::cross_entropy;
    return s;
  }

  Json json() const {
    return {{"model", model}, {"classes", classes}, {"hidden", hidden},
            {"image_size", image}, {"loss", loss}};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradpack: batched gradients and curvature for sequential networks"};
  app.require_subcommand(1);

  // bench
  auto* bench = app.add_subcommand("bench", "timing benchmarks");
  bench->require_subcommand(1);

  ModelArgs bm;
  std::size_t batch_size = 128, repeats = 5;
  std::uint64_t bench_seed = 0;
  std::string ext_list, bench_out, bench_csv, batch_sizes = "1,2,4,8,16,32,64,128";

  auto* overhead = bench->add_subcommand("overhead", "extension overhead against the gradient");
  bm.add(overhead);
  overhead->add_option("--batch-size", batch_size)->check(CLI::PositiveNumber);
  overhead->add_option("--ext", ext_list, "comma-separated extensions");
  overhead->add_option("--repeats", repeats)->check(CLI::PositiveNumber);
  overhead->add_option("--seed", bench_seed);
  overhead->add_option("--out", bench_out, "output JSON path");
  overhead->add_option("--csv", bench_csv, "also write the timing table as CSV");

  auto* batchgrad = bench->add_subcommand("batchgrad", "vectorized BatchGrad against a for-loop");
  bm.add(batchgrad);
  batchgrad->add_option("--batch-sizes", batch_sizes, "comma-separated N");
  batchgrad->add_option("--repeats", repeats)->check(CLI::PositiveNumber);
  batchgrad->add_option("--seed", bench_seed);
  batchgrad->add_option("--out", bench_out, "output JSON path");
  batchgrad->add_option("--csv", bench_csv, "also write the timing table as CSV");

  // train / gridsearch share their options
  std::string model = "logreg", data_spec, curvature = "diag_ggn", train_out;
  std::string lr_grid, damping_grid, seeds = "0";
  double lr = 1e-3, damping = 1e-3, l2 = 0.0, validation = 0.2;
  std::size_t epochs = 10, train_batch = 128, hidden = 64, mc_samples = 1;
  std::uint64_t seed = 0;

  auto add_train_options = [&](CLI::App* cmd) {
    cmd->add_option("--model", model)->check(
        CLI::IsMember({"logreg", "mlp2", "cnn-small", "cnn-sigmoid"}));
    cmd->add_option("--data", data_spec, "idx:<images>,<labels> | blobs:C,d,k")->required();
    cmd->add_option("--curvature", curvature, "diag_ggn | diag_ggn_mc | kfac | kflr | kfra");
    cmd->add_option("--l2", l2)->check(CLI::NonNegativeNumber);
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch-size", train_batch)->check(CLI::PositiveNumber);
    cmd->add_option("--hidden", hidden)->check(CLI::PositiveNumber);
    cmd->add_option("--mc-samples", mc_samples)->check(CLI::PositiveNumber);
    cmd->add_option("--validation", validation, "validation fraction")
        ->check(CLI::Range(0.0, 0.99));
    cmd->add_option("--seed", seed);
    cmd->add_option("--out", train_out, "output JSON path");
  };

  auto* train_cmd = app.add_subcommand("train", "train with a preconditioned optimizer");
  add_train_options(train_cmd);
  train_cmd->add_option("--lr", lr)->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--damping", damping)->check(CLI::NonNegativeNumber);

  auto* grid_cmd = app.add_subcommand("gridsearch", "learning rate x damping grid");
  add_train_options(grid_cmd);
  grid_cmd->add_option("--lr-grid", lr_grid, "comma-separated learning rates");
  grid_cmd->add_option("--damping-grid", damping_grid, "comma-separated damping values");
  grid_cmd->add_option("--seeds", seeds, "seeds for reruns of the best cell");
  std::size_t jobs = 1;
  grid_cmd->add_option("--jobs", jobs, "grid cells trained concurrently")
      ->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (bench->parsed()) {
      BenchConfig cfg;
      cfg.model = bm.model;
      cfg.size = bm.size();
      cfg.repeats = repeats;
      cfg.seed = bench_seed;
      Json config = bm.json();
      config["repeats"] = repeats;
      config["seed"] = bench_seed;
      if (overhead->parsed()) {
        cfg.batch_size = batch_size;
        cfg.extensions = parse_extension_list(ext_list);
        config["batch_size"] = batch_size;
        std::vector<std::string> names;
        for (auto e : cfg.extensions) names.emplace_back(extension_name(e));
        config["extensions"] = names;
        const std::vector<RunRecord> records = {bench_overhead(cfg)};
        emit(make_document("bench overhead", config, records), bench_out);
        if (!bench_csv.empty()) write_text(timings_csv(records), bench_csv);
      } else {
        const auto sizes = parse_csv<std::size_t>(batch_sizes, "--batch-sizes");
        config["batch_sizes"] = sizes;
        const auto records = bench_batchgrad(cfg, sizes);
        emit(make_document("bench batchgrad", config, records), bench_out);
        if (!bench_csv.empty()) write_text(timings_csv(records), bench_csv);
      }
      return 0;
    }

    TrainConfig base;
    base.model = model;
    base.size.hidden = hidden;
    base.optimizer.alpha = lr;
    base.optimizer.lambda = damping;
    base.optimizer.eta = l2;
    base.optimizer.curvature = parse_extension(curvature);
    base.optimizer.validate();
    base.epochs = epochs;
    base.batch_size = train_batch;
    base.seed = seed;
    base.mc_samples = mc_samples;
    base.data_label = data_spec;

    Dataset data = load_source(data_spec, seed);
    split(data, validation, seed);

    Json config = {{"model", model},
                   {"data", data_spec},
                   {"curvature", std::string(extension_name(base.optimizer.curvature))},
                   {"l2", number(l2)},
                   {"epochs", epochs},
                   {"batch_size", train_batch},
                   {"hidden", hidden},
                   {"mc_samples", mc_samples},
                   {"validation", number(validation)},
                   {"seed", seed}};

    if (train_cmd->parsed()) {
      config["lr"] = number(lr);
      config["damping"] = number(damping);
      emit(make_document("train", config, {train(base, data)}), train_out);
      return 0;
    }

    GridConfig grid;
    grid.base = base;
    if (!lr_grid.empty()) grid.alphas = parse_csv<double>(lr_grid, "--lr-grid");
    if (!damping_grid.empty()) grid.lambdas = parse_csv<double>(damping_grid, "--damping-grid");
    grid.seeds = parse_csv<std::uint64_t>(seeds, "--seeds");
    grid.jobs = jobs;
    Json lr_json = Json::array(), damp_json = Json::array();
    for (double a : grid.alphas) lr_json.push_back(number(a));
    for (double l : grid.lambdas) damp_json.push_back(number(l));
    config["lr_grid"] = lr_json;
    config["damping_grid"] = damp_json;
    config["seeds"] = grid.seeds;

    GridResult result = gridsearch(grid, data);
    Json summary;
    if (result.best) {
      const auto& best = result.cells[*result.best];
      summary["best_cell"] = *result.best;
      summary["best_lr"] = number(best.hyper->alpha);
      summary["best_damping"] = number(best.hyper->lambda);
      summary["best_validation_accuracy"] = number(best.epochs.back().validation_accuracy);
    } else {
      summary["best_cell"] = nullptr;
    }
    std::vector<RunRecord> records = std::move(result.cells);
    for (auto& r : result.reruns) records.push_back(std::move(r));
    emit(make_document("gridsearch", config, records, summary), train_out);
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "gradpack: %s\n", e.what());
    return 2;
  }
}
