#include "gradpack/harness/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <stdexcept>

#include "gradpack/errors.hpp"

namespace gradpack::harness {

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at) {
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

struct IdxFile {
  std::vector<std::uint32_t> dims;
  std::vector<unsigned char> bytes;
  std::size_t payload = 0;  // offset of the first data byte
};

IdxFile parse_idx(const std::filesystem::path& path, std::uint32_t magic, std::size_t ndims) {
  IdxFile f;
  f.bytes = read_bytes(path);
  const std::size_t header = 4 + 4 * ndims;
  if (f.bytes.size() < 4) throw ParseError(path.string() + ": truncated header");
  const std::uint32_t got = be32(f.bytes, 0);
  if (got != magic) {
    char buf[64];
    std::snprintf(buf, sizeof buf, ": bad magic 0x%08x, expected 0x%08x", got, magic);
    throw ParseError(path.string() + buf);
  }
  if (f.bytes.size() < header) throw ParseError(path.string() + ": truncated header");
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    f.dims.push_back(be32(f.bytes, 4 + 4 * i));
    count *= f.dims.back();
  }
  f.payload = header;
  if (f.bytes.size() < header + count) {
    throw ParseError(path.string() + ": truncated payload, " +
                     std::to_string(f.bytes.size() - header) + " of " + std::to_string(count) +
                     " bytes");
  }
  return f;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const IdxFile img = parse_idx(images, 0x00000803, 3);
  const IdxFile lbl = parse_idx(labels, 0x00000801, 1);
  const std::size_t n = img.dims[0], rows = img.dims[1], cols = img.dims[2];
  if (lbl.dims[0] != n) {
    throw ParseError("count mismatch: " + images.string() + " has " + std::to_string(n) +
                     " images, " + labels.string() + " has " + std::to_string(lbl.dims[0]) +
                     " labels");
  }
  Dataset d;
  d.x = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < d.x.numel(); ++i)
    d.x[i] = static_cast<double>(img.bytes[img.payload + i]) / 255.0;
  d.y.resize(n);
  std::size_t top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = lbl.bytes[lbl.payload + i];
    top = std::max(top, d.y[i]);
  }
  d.classes = top + 1;
  d.train.resize(n);
  std::iota(d.train.begin(), d.train.end(), 0);
  return d;
}

Dataset synth_blobs(std::size_t classes, std::size_t dims, std::size_t per_class,
                    std::uint64_t seed, double spread) {
  if (per_class == 0 || classes == 0) throw ConfigurationError("synth_blobs: empty dataset");
  if (dims < classes) {
    throw ConfigurationError("synth_blobs: simplex centers need dims >= classes (" +
                             std::to_string(dims) + " < " + std::to_string(classes) + ")");
  }
  // Centered one-hot vertices: pairwise distance spread * sqrt(2).
  std::vector<double> centers(classes * dims, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < classes; ++j)
      centers[c * dims + j] = spread * ((c == j ? 1.0 : 0.0) - 1.0 / static_cast<double>(classes));
  }

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = classes * per_class;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  Dataset d;
  d.classes = classes;
  d.x = Tensor({n, dims});
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = order[i] / per_class;
    d.y[i] = c;
    for (std::size_t j = 0; j < dims; ++j) d.x[i * dims + j] = centers[c * dims + j] + noise(rng);
  }
  d.train.resize(n);
  std::iota(d.train.begin(), d.train.end(), 0);
  return d;
}

void split(Dataset& data, double validation_fraction, std::uint64_t seed) {
  if (validation_fraction < 0.0 || validation_fraction >= 1.0)
    throw ConfigurationError("validation fraction must be in [0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto nv = static_cast<std::size_t>(std::lround(validation_fraction * idx.size()));
  data.validation.assign(idx.begin(), idx.begin() + nv);
  data.train.assign(idx.begin() + nv, idx.end());
  std::sort(data.validation.begin(), data.validation.end());
  std::sort(data.train.begin(), data.train.end());
}

namespace {
std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto end = s.find(',', start);
    out.push_back(s.substr(start, end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}
}  // namespace

Dataset load_source(const std::string& spec, std::uint64_t seed) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos)
    throw ConfigurationError("data source must be idx:<images>,<labels> or blobs:C,d,k");
  const std::string kind = spec.substr(0, colon);
  const auto parts = split_csv(spec.substr(colon + 1));
  if (kind == "idx") {
    if (parts.size() != 2) throw ConfigurationError("idx source needs <images>,<labels>");
    return load_idx(parts[0], parts[1]);
  }
  if (kind == "blobs") {
    if (parts.size() != 3) throw ConfigurationError("blobs source needs C,d,k");
    try {
      return synth_blobs(std::stoul(parts[0]), std::stoul(parts[1]), std::stoul(parts[2]), seed);
    } catch (const std::logic_error&) {
      throw ConfigurationError("blobs source needs integer C,d,k, got '" + spec + "'");
    }
  }
  throw ConfigurationError("unknown data source '" + kind + "'");
}

}  // namespace gradpack::harness
