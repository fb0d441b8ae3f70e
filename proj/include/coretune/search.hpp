// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

#include "coretune/common.hpp"

namespace coretune {

struct Domain {
  enum class Kind { uniform, log_uniform, choice, int_choice };

  Kind kind = Kind::uniform;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<std::string> choices;
  std::vector<std::int64_t> int_choices;

  bool is_continuous() const { return kind == Kind::uniform || kind == Kind::log_uniform; }
  std::size_t cardinality() const { return kind == Kind::choice ? choices.size() : int_choices.size(); }
  void validate(const std::string& name) const;
};

/// Ordered, named hyper-parameter domains.
struct ParamSpace {
  std::vector<std::pair<std::string, Domain>> domains;

  void validate() const;
  const Domain& at(std::string_view name) const;
};

using ParamValue = std::variant<double, std::int64_t, std::string>;

enum class Provenance { random, tpe_prior, tpe_ei };

/// One concrete assignment, aligned with the space's domain order.
struct ConfigSample {
  std::vector<std::pair<std::string, ParamValue>> values;
  Provenance provenance = Provenance::random;

  bool has(std::string_view name) const;
  const ParamValue& at(std::string_view name) const;
  double number(std::string_view name) const;       // double or int64 widened
  std::int64_t integer(std::string_view name) const;
  const std::string& text(std::string_view name) const;
};

bool value_in_domain(const ParamValue& v, const Domain& d);

struct Observation {
  ConfigSample config;
  double score = 0.0;     // minimized
  double resource = 0.0;  // epochs spent when observed
};

/// Append-only observation log, safe for concurrent append from workers.
class ObservationHistory {
 public:
  void append(Observation obs);
  std::vector<Observation> snapshot() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<Observation> observations_;
};

ConfigSample sample_random(const ParamSpace& space, Rng& rng);

struct TpeConfig {
  double gamma = 0.25;    // quantile defining the good group
  int n_candidates = 24;  // draws from the good-density per suggestion
  int min_obs = 10;       // below this, fall back to prior sampling
  // Widening factor on the good-density bandwidth. The rest density keeps
  // plain Scott's rule; a slightly wider good density trades a little
  // refinement precision for a faster march toward unexplored optima.
  double good_bandwidth_widening = 1.5;
};

/// Number of observations in the good group: ceil(gamma * n).
int tpe_good_count(std::size_t n_observations, double gamma);

ConfigSample tpe_suggest(const ParamSpace& space, const std::vector<Observation>& history, const TpeConfig& cfg,
                         Rng& rng);

class Searcher {
 public:
  virtual ~Searcher() = default;
  virtual ConfigSample suggest(const std::vector<Observation>& history) = 0;
};

class RandomSearcher : public Searcher {
 public:
  RandomSearcher(ParamSpace space, std::uint64_t seed);
  ConfigSample suggest(const std::vector<Observation>& history) override;

 private:
  ParamSpace space_;
  Rng rng_;
};

class TpeSearcher : public Searcher {
 public:
  TpeSearcher(ParamSpace space, TpeConfig cfg, std::uint64_t seed);
  ConfigSample suggest(const std::vector<Observation>& history) override;

 private:
  ParamSpace space_;
  TpeConfig cfg_;
  Rng rng_;
};

std::unique_ptr<Searcher> make_searcher(const std::string& kind, const ParamSpace& space, const TpeConfig& tpe,
                                        std::uint64_t seed);

using HistoryProvider = std::function<std::vector<Observation>()>;

/// Draws n configurations sequentially; when a history provider is given it
/// is consulted before every draw so evaluations completed meanwhile inform
/// the searcher.
std::vector<ConfigSample> generate_configs(const ParamSpace& space, int n, Searcher& searcher,
                                           const HistoryProvider& history = {});

}  // namespace coretune
