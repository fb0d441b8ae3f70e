// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "coretune/common.hpp"

namespace coretune {

/// Densified tabular classification dataset. Labels are contiguous class ids
/// in [0, n_classes); the remapping from original file labels is stable
/// (sorted original values map to 0..C-1).
struct Dataset {
  Eigen::MatrixXd features;  // N x d
  std::vector<int> labels;   // size N
  int n_classes = 0;
  std::string split_tag;  // "train", "validation", "test", or "" when unsplit

  long n() const { return features.rows(); }
  long dim() const { return features.cols(); }
};

/// Fixed partition of {0..N-1} into ceil(N/B) mini-batches. All batches have
/// exactly B members except possibly the last.
struct BatchPlan {
  int batch_size = 0;
  std::vector<std::vector<int>> batches;
  std::uint64_t seed = 0;

  int batch_count() const { return static_cast<int>(batches.size()); }
};

/// Parses LIBSVM text: `<label> <idx>:<val> ...` with strictly increasing
/// 1-based indices per line. Feature dimension is the maximum index seen and
/// absent indices densify to 0. Throws ParseError naming the offending line.
Dataset parse_libsvm(std::istream& in);
Dataset parse_libsvm_file(const std::string& path);

/// Writes in sparse LIBSVM form (only nonzeros, contiguous class-id labels).
void write_libsvm(const Dataset& ds, std::ostream& out);

struct SplitResult {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Disjoint exhaustive partition with floor(N*frac) validation and test
/// rows; deterministic per seed. Requires an unsplit dataset and
/// val_frac, test_frac in (0,1) with sum < 1.
SplitResult split_dataset(const Dataset& ds, double val_frac, double test_frac, std::uint64_t seed);

BatchPlan make_batches(const Dataset& ds, int batch_size, std::uint64_t seed);

/// Per-column z-score parameters fit on the training split. Constant columns
/// keep stddev 1 so they map to 0.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd stddev;

  void apply(Dataset& ds) const;
};

Standardizer fit_standardizer(const Dataset& train);

// Binary cache of a split trio: JSON header (n per split, d, C) followed by
// little-endian float32 features and int32 labels per split.
void save_split_cache(const SplitResult& splits, const std::string& path);
SplitResult load_split_cache(const std::string& path);

/// Class-conditional one-hot tabular generator. Features come in `groups`
/// blocks of `symbols` columns, exactly one active per block; informative
/// blocks favor a class-dependent symbol with probability `signal`.
struct SyntheticTabularSpec {
  int n_samples = 0;
  int n_classes = 3;
  int groups = 60;
  int symbols = 3;
  int informative_groups = 20;
  double signal = 0.5;
  double label_noise = 0.02;
  std::uint64_t seed = 0;
};

Dataset synthesize_tabular(const SyntheticTabularSpec& spec);

/// Shape-compatible stand-in for the LIBSVM dna table rows
/// (3 classes, 180 features, 1400/600/1186 split off a 3186-sample pool).
SyntheticTabularSpec dna_like_spec(std::uint64_t seed);

}  // namespace coretune
