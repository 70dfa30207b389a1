#include "gradpack/harness/record.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "gradpack/errors.hpp"

namespace gradpack::harness {

namespace {

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(),
                                            [](double x, double y) { return same_bits(x, y); });
}

bool same_bits(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib)
    if (ia->first != ib->first || !same_bits(ia->second, ib->second)) return false;
  return true;
}

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

}  // namespace

TimingStats TimingStats::from(std::vector<double> seconds) {
  if (seconds.empty()) throw ConfigurationError("timing needs at least one repeat");
  TimingStats t;
  std::vector<double> s = seconds;
  std::sort(s.begin(), s.end());
  t.seconds = std::move(seconds);
  t.min = s.front();
  t.max = s.back();
  t.median = quantile(s, 0.5);
  t.q1 = quantile(s, 0.25);
  t.q3 = quantile(s, 0.75);
  return t;
}

bool operator==(const TimingStats& a, const TimingStats& b) {
  return same_bits(a.seconds, b.seconds) && same_bits(a.median, b.median) &&
         same_bits(a.q1, b.q1) && same_bits(a.q3, b.q3) && same_bits(a.min, b.min) &&
         same_bits(a.max, b.max);
}

bool operator==(const EpochMetrics& a, const EpochMetrics& b) {
  return a.epoch == b.epoch && same_bits(a.train_loss, b.train_loss) &&
         same_bits(a.train_accuracy, b.train_accuracy) &&
         same_bits(a.validation_accuracy, b.validation_accuracy);
}

bool operator==(const Hyperparameters& a, const Hyperparameters& b) {
  return same_bits(a.alpha, b.alpha) && same_bits(a.lambda, b.lambda) &&
         same_bits(a.eta, b.eta) && a.curvature == b.curvature;
}

bool operator==(const RunRecord& a, const RunRecord& b) {
  return a.command == b.command && a.model == b.model && a.data == b.data &&
         a.batch_size == b.batch_size && a.extensions == b.extensions &&
         a.repeats == b.repeats && a.seed == b.seed && a.hyper == b.hyper &&
         a.epochs == b.epochs && a.status == b.status && same_bits(a.values, b.values) &&
         a.timings == b.timings && same_bits(a.ratios, b.ratios);
}

Json number(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
  return v;
}

double to_number(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
  }
  throw ParseError("expected a number, got " + j.dump());
}

namespace {

Json numbers(const std::vector<double>& v) {
  Json out = Json::array();
  for (double x : v) out.push_back(number(x));
  return out;
}

Json number_map(const std::map<std::string, double>& m) {
  Json out = Json::object();
  for (const auto& [k, v] : m) out[k] = number(v);
  return out;
}

std::map<std::string, double> read_number_map(const Json& j) {
  std::map<std::string, double> out;
  for (const auto& [k, v] : j.items()) out[k] = to_number(v);
  return out;
}

Json record_results(const RunRecord& r) {
  Json j;
  j["command"] = r.command;
  j["model"] = r.model;
  j["data"] = r.data;
  j["batch_size"] = r.batch_size;
  j["extensions"] = r.extensions;
  j["repeats"] = r.repeats;
  j["seed"] = r.seed;
  if (r.hyper) {
    j["hyperparameters"] = {{"alpha", number(r.hyper->alpha)},
                            {"lambda", number(r.hyper->lambda)},
                            {"eta", number(r.hyper->eta)},
                            {"curvature", r.hyper->curvature}};
  }
  Json epochs = Json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", number(e.train_loss)},
                      {"train_accuracy", number(e.train_accuracy)},
                      {"validation_accuracy", number(e.validation_accuracy)}});
  }
  j["epochs"] = std::move(epochs);
  j["status"] = r.status;
  j["values"] = number_map(r.values);
  return j;
}

Json record_timings(const RunRecord& r) {
  Json t = Json::object();
  for (const auto& [k, s] : r.timings) {
    t[k] = {{"median", number(s.median)}, {"q1", number(s.q1)},     {"q3", number(s.q3)},
            {"min", number(s.min)},       {"max", number(s.max)},   {"seconds", numbers(s.seconds)}};
  }
  return {{"wall_seconds", std::move(t)}, {"ratios", number_map(r.ratios)}};
}

RunRecord read_record(const Json& res, const Json& tim) {
  RunRecord r;
  r.command = res.at("command").get<std::string>();
  r.model = res.at("model").get<std::string>();
  r.data = res.at("data").get<std::string>();
  r.batch_size = res.at("batch_size").get<std::size_t>();
  r.extensions = res.at("extensions").get<std::vector<std::string>>();
  r.repeats = res.at("repeats").get<std::size_t>();
  r.seed = res.at("seed").get<std::uint64_t>();
  if (res.contains("hyperparameters")) {
    const auto& h = res["hyperparameters"];
    r.hyper = Hyperparameters{to_number(h.at("alpha")), to_number(h.at("lambda")),
                              to_number(h.at("eta")), h.at("curvature").get<std::string>()};
  }
  for (const auto& e : res.at("epochs")) {
    r.epochs.push_back({e.at("epoch").get<std::size_t>(), to_number(e.at("train_loss")),
                        to_number(e.at("train_accuracy")),
                        to_number(e.at("validation_accuracy"))});
  }
  r.status = res.at("status").get<std::string>();
  r.values = read_number_map(res.at("values"));
  for (const auto& [k, s] : tim.at("wall_seconds").items()) {
    TimingStats t;
    for (const auto& v : s.at("seconds")) t.seconds.push_back(to_number(v));
    t.median = to_number(s.at("median"));
    t.q1 = to_number(s.at("q1"));
    t.q3 = to_number(s.at("q3"));
    t.min = to_number(s.at("min"));
    t.max = to_number(s.at("max"));
    r.timings[k] = std::move(t);
  }
  r.ratios = read_number_map(tim.at("ratios"));
  return r;
}

}  // namespace

Json make_document(const std::string& command, const Json& config,
                   const std::vector<RunRecord>& records, const Json& summary) {
  Json results = Json::array();
  Json timings = Json::array();
  for (const auto& r : records) {
    results.push_back(record_results(r));
    timings.push_back(record_timings(r));
  }
  Json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["command"] = command;
  doc["config"] = config;
  doc["results"] = {{"records", std::move(results)}, {"summary", summary}};
  doc["timings"] = std::move(timings);
  return doc;
}

Document parse_document(const Json& doc) {
  try {
    if (doc.at("schema_version") != kSchemaVersion) {
      throw ParseError("unsupported schema_version " + doc.at("schema_version").dump());
    }
    Document d;
    d.command = doc.at("command").get<std::string>();
    d.config = doc.at("config");
    const auto& recs = doc.at("results").at("records");
    const auto& tims = doc.at("timings");
    if (recs.size() != tims.size()) throw ParseError("results and timings differ in length");
    for (std::size_t i = 0; i < recs.size(); ++i) d.records.push_back(read_record(recs[i], tims[i]));
    d.summary = doc.at("results").at("summary");
    return d;
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed result document: ") + e.what());
  }
}

std::string timings_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os.precision(17);
  os << "record,model,batch_size,extensions,quantity,repeats,median,q1,q3,min,max\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const RunRecord& r = records[i];
    std::string ext;
    for (const auto& e : r.extensions) ext += (ext.empty() ? "" : ";") + e;
    for (const auto& [name, t] : r.timings) {
      os << i << ',' << r.model << ',' << r.batch_size << ',' << ext << ',' << name << ','
         << t.seconds.size() << ',' << t.median << ',' << t.q1 << ',' << t.q3 << ',' << t.min
         << ',' << t.max << '\n';
    }
  }
  return os.str();
}

}  // namespace gradpack::harness
