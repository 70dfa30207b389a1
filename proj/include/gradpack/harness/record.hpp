#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace gradpack::harness {

using Json = nlohmann::ordered_json;

struct TimingStats {
  std::vector<double> seconds;  // one entry per timed repeat
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;

  // Linear-interpolated quartiles of the samples.
  static TimingStats from(std::vector<double> seconds);
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct Hyperparameters {
  double alpha = 0.0;
  double lambda = 0.0;
  double eta = 0.0;
  std::string curvature;
};

struct RunRecord {
  std::string command;
  std::string model;
  std::string data;
  std::size_t batch_size = 0;
  std::vector<std::string> extensions;
  std::size_t repeats = 0;
  std::uint64_t seed = 0;
  std::optional<Hyperparameters> hyper;
  std::vector<EpochMetrics> epochs;
  std::string status = "ok";
  // Deterministic scalars: checksums, parameter counts, final accuracies.
  std::map<std::string, double> values;

  // Wall-clock data. Serialized outside "results" so that results compare
  // bitwise across reruns.
  std::map<std::string, TimingStats> timings;
  std::map<std::string, double> ratios;
};

bool operator==(const TimingStats& a, const TimingStats& b);
bool operator==(const EpochMetrics& a, const EpochMetrics& b);
bool operator==(const Hyperparameters& a, const Hyperparameters& b);
bool operator==(const RunRecord& a, const RunRecord& b);

inline constexpr const char* kSchemaVersion = "1";

// {schema_version, command, config, results: {records, summary}, timings: [...]}
Json make_document(const std::string& command, const Json& config,
                   const std::vector<RunRecord>& records, const Json& summary = Json::object());

struct Document {
  std::string command;
  Json config;
  std::vector<RunRecord> records;
  Json summary;
};

// Throws ParseError for a wrong schema version or malformed document.
Document parse_document(const Json& doc);

// Timing tables flattened to CSV, one row per record and timed quantity:
// record,model,batch_size,extensions,quantity,repeats,median,q1,q3,min,max
std::string timings_csv(const std::vector<RunRecord>& records);

// Doubles are written with round-trip precision; non-finite values as the
// strings "NaN", "Infinity", "-Infinity".
Json number(double v);
double to_number(const Json& j);

}  // namespace gradpack::harness
