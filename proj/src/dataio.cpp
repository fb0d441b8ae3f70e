// SPDX-License-Identifier: Apache-2.0
#include "coretune/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace coretune {

static_assert(std::endian::native == std::endian::little, "cache format assumes a little-endian host");

namespace {

struct SparseRow {
  long label = 0;
  std::vector<std::pair<int, double>> entries;  // (0-based column, value)
};

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw ParseError("parse error at line " + std::to_string(line_no) + ": " + what);
}

long parse_long(std::string_view tok, std::size_t line_no, const char* what) {
  long v = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    parse_fail(line_no, std::string("invalid ") + what + " '" + std::string(tok) + "'");
  }
  return v;
}

double parse_double(std::string_view tok, std::size_t line_no, const char* what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size()) {
    parse_fail(line_no, std::string("invalid ") + what + " '" + std::string(tok) + "'");
  }
  return v;
}

}  // namespace

Dataset parse_libsvm(std::istream& in) {
  std::vector<SparseRow> rows;
  int max_index = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t pos = 0;
    const auto next_token = [&]() -> std::string_view {
      while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' || line[pos] == '\r')) ++pos;
      if (pos >= line.size()) return {};
      const std::size_t start = pos;
      while (pos < line.size() && line[pos] != ' ' && line[pos] != '\t' && line[pos] != '\r') ++pos;
      return std::string_view(line).substr(start, pos - start);
    };

    const std::string_view label_tok = next_token();
    if (label_tok.empty()) continue;  // blank line
    SparseRow row;
    row.label = parse_long(label_tok, line_no, "label");

    int prev_index = 0;
    for (std::string_view tok = next_token(); !tok.empty(); tok = next_token()) {
      const std::size_t colon = tok.find(':');
      if (colon == std::string_view::npos) parse_fail(line_no, "expected idx:val, got '" + std::string(tok) + "'");
      const long idx = parse_long(tok.substr(0, colon), line_no, "feature index");
      if (idx < 1) parse_fail(line_no, "feature index must be >= 1");
      if (idx <= prev_index) parse_fail(line_no, "feature indices must be strictly increasing");
      const double val = parse_double(tok.substr(colon + 1), line_no, "feature value");
      prev_index = static_cast<int>(idx);
      row.entries.emplace_back(static_cast<int>(idx) - 1, val);
    }
    max_index = std::max(max_index, prev_index);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty LIBSVM input");

  // Stable remapping: sorted original label values -> 0..C-1.
  std::map<long, int> label_map;
  for (const auto& r : rows) label_map.emplace(r.label, 0);
  if (label_map.size() < 2) throw ParseError("dataset must contain at least 2 classes");
  int next_id = 0;
  for (auto& [orig, id] : label_map) id = next_id++;

  Dataset ds;
  ds.features = Eigen::MatrixXd::Zero(static_cast<long>(rows.size()), max_index);
  ds.labels.resize(rows.size());
  ds.n_classes = next_id;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ds.labels[i] = label_map.at(rows[i].label);
    for (const auto& [col, val] : rows[i].entries) ds.features(static_cast<long>(i), col) = val;
  }
  return ds;
}

Dataset parse_libsvm_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset file: " + path);
  return parse_libsvm(in);
}

void write_libsvm(const Dataset& ds, std::ostream& out) {
  out.precision(17);
  for (long i = 0; i < ds.n(); ++i) {
    out << ds.labels[static_cast<std::size_t>(i)];
    for (long j = 0; j < ds.dim(); ++j) {
      const double v = ds.features(i, j);
      if (v != 0.0) out << ' ' << (j + 1) << ':' << v;
    }
    out << '\n';
  }
}

SplitResult split_dataset(const Dataset& ds, double val_frac, double test_frac, std::uint64_t seed) {
  if (!ds.split_tag.empty()) throw ConfigError("dataset already carries split tag '" + ds.split_tag + "'");
  if (!(val_frac > 0.0 && val_frac < 1.0) || !(test_frac > 0.0 && test_frac < 1.0) || val_frac + test_frac >= 1.0) {
    throw ConfigError("split fractions must lie in (0,1) and sum below 1");
  }
  const long n = ds.n();
  const long n_val = static_cast<long>(std::floor(static_cast<double>(n) * val_frac));
  const long n_test = static_cast<long>(std::floor(static_cast<double>(n) * test_frac));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(order);

  const auto take = [&ds](std::vector<int> idx, const char* tag) {
    std::sort(idx.begin(), idx.end());  // keep original row order within a split
    Dataset out;
    out.features.resize(static_cast<long>(idx.size()), ds.dim());
    out.labels.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.features.row(static_cast<long>(i)) = ds.features.row(idx[i]);
      out.labels[i] = ds.labels[static_cast<std::size_t>(idx[i])];
    }
    out.n_classes = ds.n_classes;
    out.split_tag = tag;
    return out;
  };

  SplitResult result;
  result.validation = take({order.begin(), order.begin() + n_val}, "validation");
  result.test = take({order.begin() + n_val, order.begin() + n_val + n_test}, "test");
  result.train = take({order.begin() + n_val + n_test, order.end()}, "train");
  return result;
}

BatchPlan make_batches(const Dataset& ds, int batch_size, std::uint64_t seed) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  const long n = ds.n();
  if (batch_size > n) {
    log_debug("batch size ", batch_size, " exceeds dataset size ", n, "; using a single batch");
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "batches"));
  rng.shuffle(order);

  BatchPlan plan;
  plan.batch_size = batch_size;
  plan.seed = seed;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    plan.batches.emplace_back(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
  }
  return plan;
}

void Standardizer::apply(Dataset& ds) const {
  if (ds.dim() != mean.size()) throw ConfigError("standardizer dimension mismatch");
  ds.features.rowwise() -= mean.transpose();
  ds.features.array().rowwise() /= stddev.transpose().array();
}

Standardizer fit_standardizer(const Dataset& train) {
  Standardizer s;
  const double n = static_cast<double>(train.n());
  s.mean = train.features.colwise().mean();
  Eigen::VectorXd var = (train.features.rowwise() - s.mean.transpose()).array().square().colwise().sum() / n;
  s.stddev = var.array().sqrt();
  for (long j = 0; j < s.stddev.size(); ++j) {
    if (s.stddev(j) < 1e-12) s.stddev(j) = 1.0;
  }
  return s;
}

namespace {

void write_block(std::ofstream& out, const Dataset& ds) {
  std::vector<float> buf(static_cast<std::size_t>(ds.n() * ds.dim()));
  for (long i = 0; i < ds.n(); ++i) {
    for (long j = 0; j < ds.dim(); ++j) {
      buf[static_cast<std::size_t>(i * ds.dim() + j)] = static_cast<float>(ds.features(i, j));
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  std::vector<std::int32_t> lab(ds.labels.begin(), ds.labels.end());
  out.write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t)));
}

Dataset read_block(std::ifstream& in, long n, long d, int n_classes, const char* tag) {
  Dataset ds;
  ds.features.resize(n, d);
  std::vector<float> buf(static_cast<std::size_t>(n * d));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  for (long i = 0; i < n; ++i) {
    for (long j = 0; j < d; ++j) ds.features(i, j) = buf[static_cast<std::size_t>(i * d + j)];
  }
  std::vector<std::int32_t> lab(static_cast<std::size_t>(n));
  in.read(reinterpret_cast<char*>(lab.data()), static_cast<std::streamsize>(lab.size() * sizeof(std::int32_t)));
  if (!in) throw ParseError("truncated dataset cache");
  ds.labels.assign(lab.begin(), lab.end());
  ds.n_classes = n_classes;
  ds.split_tag = tag;
  return ds;
}

constexpr char kCacheMagic[8] = {'C', 'T', 'D', 'S', '0', '0', '0', '1'};

}  // namespace

void save_split_cache(const SplitResult& splits, const std::string& path) {
  nlohmann::json header{{"n_train", splits.train.n()},
                        {"n_validation", splits.validation.n()},
                        {"n_test", splits.test.n()},
                        {"d", splits.train.dim()},
                        {"c", splits.train.n_classes}};
  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open cache for writing: " + path);
  out.write(kCacheMagic, sizeof(kCacheMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(header_text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  write_block(out, splits.train);
  write_block(out, splits.validation);
  write_block(out, splits.test);
  if (!out) throw ParseError("failed writing cache: " + path);
}

SplitResult load_split_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open cache: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) throw ParseError("bad cache magic: " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_text(len, '\0');
  in.read(header_text.data(), len);
  if (!in) throw ParseError("truncated cache header: " + path);
  const nlohmann::json header = nlohmann::json::parse(header_text);
  const long d = header.at("d").get<long>();
  const int c = header.at("c").get<int>();
  SplitResult splits;
  splits.train = read_block(in, header.at("n_train").get<long>(), d, c, "train");
  splits.validation = read_block(in, header.at("n_validation").get<long>(), d, c, "validation");
  splits.test = read_block(in, header.at("n_test").get<long>(), d, c, "test");
  return splits;
}

Dataset synthesize_tabular(const SyntheticTabularSpec& spec) {
  if (spec.n_samples <= 0 || spec.n_classes < 2 || spec.groups <= 0 || spec.symbols < 2) {
    throw ConfigError("invalid synthetic dataset spec");
  }
  Rng rng(derive_seed(spec.seed, "synthetic"));
  const int d = spec.groups * spec.symbols;
  Dataset ds;
  ds.features = Eigen::MatrixXd::Zero(spec.n_samples, d);
  ds.labels.resize(static_cast<std::size_t>(spec.n_samples));
  ds.n_classes = spec.n_classes;

  for (int i = 0; i < spec.n_samples; ++i) {
    const int cls = static_cast<int>(rng.uniform_int(0, spec.n_classes - 1));
    for (int g = 0; g < spec.groups; ++g) {
      int symbol;
      if (g < spec.informative_groups) {
        const int preferred = (g * 7 + cls * 3 + cls) % spec.symbols;
        if (rng.next_double() < spec.signal) {
          symbol = preferred;
        } else {
          symbol = static_cast<int>(rng.uniform_int(0, spec.symbols - 1));
        }
      } else {
        symbol = static_cast<int>(rng.uniform_int(0, spec.symbols - 1));
      }
      ds.features(i, g * spec.symbols + symbol) = 1.0;
    }
    int label = cls;
    if (rng.next_double() < spec.label_noise) {
      label = static_cast<int>(rng.uniform_int(0, spec.n_classes - 1));
    }
    ds.labels[static_cast<std::size_t>(i)] = label;
  }
  return ds;
}

SyntheticTabularSpec dna_like_spec(std::uint64_t seed) {
  SyntheticTabularSpec spec;
  spec.n_samples = 1400 + 600 + 1186;
  spec.n_classes = 3;
  spec.groups = 60;
  spec.symbols = 3;
  spec.informative_groups = 24;
  spec.signal = 0.5;
  spec.label_noise = 0.02;
  spec.seed = seed;
  return spec;
}

}  // namespace coretune
