// SPDX-License-Identifier: Apache-2.0
#include "coretune/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace coretune {

void Domain::validate(const std::string& name) const {
  switch (kind) {
    case Kind::uniform:
      if (!(lo < hi)) throw ConfigError("domain '" + name + "': lo must be < hi");
      break;
    case Kind::log_uniform:
      if (!(lo < hi)) throw ConfigError("domain '" + name + "': lo must be < hi");
      if (!(lo > 0.0)) throw ConfigError("domain '" + name + "': log_uniform needs lo > 0");
      break;
    case Kind::choice:
      if (choices.empty()) throw ConfigError("domain '" + name + "': empty choice list");
      break;
    case Kind::int_choice:
      if (int_choices.empty()) throw ConfigError("domain '" + name + "': empty int_choice list");
      break;
  }
}

void ParamSpace::validate() const {
  if (domains.empty()) throw ConfigError("parameter space is empty");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    domains[i].second.validate(domains[i].first);
    for (std::size_t j = i + 1; j < domains.size(); ++j) {
      if (domains[i].first == domains[j].first) throw ConfigError("duplicate domain name '" + domains[i].first + "'");
    }
  }
}

const Domain& ParamSpace::at(std::string_view name) const {
  for (const auto& [n, d] : domains) {
    if (n == name) return d;
  }
  throw ConfigError("no domain named '" + std::string(name) + "'");
}

bool ConfigSample::has(std::string_view name) const {
  for (const auto& [n, v] : values) {
    if (n == name) return true;
  }
  return false;
}

const ParamValue& ConfigSample::at(std::string_view name) const {
  for (const auto& [n, v] : values) {
    if (n == name) return v;
  }
  throw ConfigError("config sample has no value for '" + std::string(name) + "'");
}

double ConfigSample::number(std::string_view name) const {
  const ParamValue& v = at(name);
  if (const double* d = std::get_if<double>(&v)) return *d;
  if (const std::int64_t* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw ConfigError("value '" + std::string(name) + "' is not numeric");
}

std::int64_t ConfigSample::integer(std::string_view name) const {
  const ParamValue& v = at(name);
  if (const std::int64_t* i = std::get_if<std::int64_t>(&v)) return *i;
  throw ConfigError("value '" + std::string(name) + "' is not an integer");
}

const std::string& ConfigSample::text(std::string_view name) const {
  const ParamValue& v = at(name);
  if (const std::string* s = std::get_if<std::string>(&v)) return *s;
  throw ConfigError("value '" + std::string(name) + "' is not a string");
}

bool value_in_domain(const ParamValue& v, const Domain& d) {
  switch (d.kind) {
    case Domain::Kind::uniform:
    case Domain::Kind::log_uniform: {
      const double* x = std::get_if<double>(&v);
      return x != nullptr && *x >= d.lo && *x <= d.hi;
    }
    case Domain::Kind::choice: {
      const std::string* s = std::get_if<std::string>(&v);
      return s != nullptr && std::find(d.choices.begin(), d.choices.end(), *s) != d.choices.end();
    }
    case Domain::Kind::int_choice: {
      const std::int64_t* i = std::get_if<std::int64_t>(&v);
      return i != nullptr && std::find(d.int_choices.begin(), d.int_choices.end(), *i) != d.int_choices.end();
    }
  }
  return false;
}

void ObservationHistory::append(Observation obs) {
  if (!std::isfinite(obs.score)) throw ConfigError("observation scores must be finite");
  std::lock_guard<std::mutex> lock(mu_);
  observations_.push_back(std::move(obs));
}

std::vector<Observation> ObservationHistory::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return observations_;
}

std::size_t ObservationHistory::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return observations_.size();
}

namespace {

ParamValue draw_value(const Domain& d, Rng& rng) {
  switch (d.kind) {
    case Domain::Kind::uniform:
      return rng.uniform(d.lo, d.hi);
    case Domain::Kind::log_uniform:
      // exp(log(hi)) can land one ulp above hi; clamp in original space
      return std::clamp(std::exp(rng.uniform(std::log(d.lo), std::log(d.hi))), d.lo, d.hi);
    case Domain::Kind::choice:
      return d.choices[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(d.choices.size()) - 1))];
    case Domain::Kind::int_choice:
      return d.int_choices[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(d.int_choices.size()) - 1))];
  }
  throw ConfigError("unreachable domain kind");
}

}  // namespace

ConfigSample sample_random(const ParamSpace& space, Rng& rng) {
  ConfigSample sample;
  sample.provenance = Provenance::random;
  for (const auto& [name, domain] : space.domains) {
    sample.values.emplace_back(name, draw_value(domain, rng));
  }
  return sample;
}

int tpe_good_count(std::size_t n_observations, double gamma) {
  return static_cast<int>(std::ceil(gamma * static_cast<double>(n_observations) - 1e-12));
}

namespace {

// Transformed coordinate for continuous domains: identity for uniform,
// natural log for log_uniform.
double to_u(const Domain& d, double x) { return d.kind == Domain::Kind::log_uniform ? std::log(x) : x; }
double from_u(const Domain& d, double u) { return d.kind == Domain::Kind::log_uniform ? std::exp(u) : u; }
double u_lo(const Domain& d) { return d.kind == Domain::Kind::log_uniform ? std::log(d.lo) : d.lo; }
double u_hi(const Domain& d) { return d.kind == Domain::Kind::log_uniform ? std::log(d.hi) : d.hi; }

// Per-dimension Parzen estimator over transformed points: one Gaussian
// kernel per observation plus the uniform prior as an extra mixture
// component. The prior keeps early suggestions exploratory when the
// observations cluster away from the optimum. Bandwidth is Scott's rule over
// the estimator's point set (observations plus the prior pseudo-point at the
// domain midpoint), floored at 1% of the domain width.
struct Kde1d {
  std::vector<double> points;
  double bandwidth = 1.0;
  double lo = 0.0;
  double hi = 1.0;

  static Kde1d fit(const Domain& d, const std::vector<double>& us, double widen = 1.0) {
    Kde1d kde;
    kde.points = us;
    kde.lo = u_lo(d);
    kde.hi = u_hi(d);
    const double width = kde.hi - kde.lo;
    const double floor_bw = 0.01 * width;

    std::vector<double> scale_points = us;
    scale_points.push_back(0.5 * (kde.lo + kde.hi));
    const double n = static_cast<double>(scale_points.size());
    const double mean = std::accumulate(scale_points.begin(), scale_points.end(), 0.0) / n;
    double var = 0.0;
    for (const double u : scale_points) var += (u - mean) * (u - mean);
    var /= n;
    const double scott = std::sqrt(var) * std::pow(n, -0.2);
    kde.bandwidth = std::max({floor_bw, scott * widen, 1e-12});
    return kde;
  }

  double log_density(double u) const {
    const double n_components = static_cast<double>(points.size()) + 1.0;
    double acc = 1.0 / (hi - lo);  // uniform prior component
    const double inv = 1.0 / bandwidth;
    for (const double p : points) {
      const double z = (u - p) * inv;
      acc += std::exp(-0.5 * z * z) * inv * 0.3989422804014327;
    }
    return std::log(std::max(acc / n_components, 1e-300));
  }

  double sample(const Domain& d, Rng& rng) const {
    const auto component = rng.uniform_int(0, static_cast<std::int64_t>(points.size()));
    if (component == static_cast<std::int64_t>(points.size())) return rng.uniform(u_lo(d), u_hi(d));
    const double u = points[static_cast<std::size_t>(component)] + bandwidth * rng.normal();
    return std::clamp(u, u_lo(d), u_hi(d));
  }
};

// Laplace-smoothed categorical mass over choice indices.
struct CategoricalPmf {
  std::vector<double> probs;

  static CategoricalPmf fit(std::size_t cardinality, const std::vector<std::size_t>& picks) {
    CategoricalPmf pmf;
    pmf.probs.assign(cardinality, 1.0);  // Laplace prior count
    for (const std::size_t p : picks) pmf.probs[p] += 1.0;
    const double total = std::accumulate(pmf.probs.begin(), pmf.probs.end(), 0.0);
    for (double& p : pmf.probs) p /= total;
    return pmf;
  }

  double log_mass(std::size_t idx) const { return std::log(probs[idx]); }

  std::size_t sample(Rng& rng) const {
    const double r = rng.next_double();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (r < acc) return i;
    }
    return probs.size() - 1;
  }
};

std::size_t choice_index(const Domain& d, const ParamValue& v) {
  if (d.kind == Domain::Kind::choice) {
    const auto& s = std::get<std::string>(v);
    const auto it = std::find(d.choices.begin(), d.choices.end(), s);
    return static_cast<std::size_t>(it - d.choices.begin());
  }
  const auto i = std::get<std::int64_t>(v);
  const auto it = std::find(d.int_choices.begin(), d.int_choices.end(), i);
  return static_cast<std::size_t>(it - d.int_choices.begin());
}

}  // namespace

ConfigSample tpe_suggest(const ParamSpace& space, const std::vector<Observation>& history, const TpeConfig& cfg,
                         Rng& rng) {
  const auto prior = [&] {
    ConfigSample s = sample_random(space, rng);
    s.provenance = Provenance::tpe_prior;
    return s;
  };
  if (static_cast<int>(history.size()) < cfg.min_obs) return prior();

  // Sort indices by score ascending (scores are minimized), stable on ties.
  std::vector<std::size_t> order(history.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return history[a].score < history[b].score; });
  if (history[order.front()].score == history[order.back()].score) {
    // All scores identical: the split carries no information.
    return prior();
  }
  const int n_good = tpe_good_count(history.size(), cfg.gamma);
  std::vector<std::size_t> good(order.begin(), order.begin() + n_good);
  std::vector<std::size_t> rest(order.begin() + n_good, order.end());

  // Per-dimension densities; dimensions are treated independently.
  struct DimModel {
    bool continuous = false;
    Kde1d good_kde, rest_kde;
    CategoricalPmf good_pmf, rest_pmf;
  };
  std::vector<DimModel> models;
  models.reserve(space.domains.size());
  for (const auto& [name, domain] : space.domains) {
    DimModel m;
    m.continuous = domain.is_continuous();
    if (m.continuous) {
      std::vector<double> good_us, rest_us;
      for (const std::size_t i : good) good_us.push_back(to_u(domain, std::get<double>(history[i].config.at(name))));
      for (const std::size_t i : rest) rest_us.push_back(to_u(domain, std::get<double>(history[i].config.at(name))));
      m.good_kde = Kde1d::fit(domain, good_us, cfg.good_bandwidth_widening);
      m.rest_kde = Kde1d::fit(domain, rest_us);
    } else {
      std::vector<std::size_t> good_picks, rest_picks;
      for (const std::size_t i : good) good_picks.push_back(choice_index(domain, history[i].config.at(name)));
      for (const std::size_t i : rest) rest_picks.push_back(choice_index(domain, history[i].config.at(name)));
      m.good_pmf = CategoricalPmf::fit(domain.cardinality(), good_picks);
      m.rest_pmf = CategoricalPmf::fit(domain.cardinality(), rest_picks);
    }
    models.push_back(std::move(m));
  }

  ConfigSample best;
  double best_ei = -std::numeric_limits<double>::infinity();
  for (int c = 0; c < cfg.n_candidates; ++c) {
    ConfigSample candidate;
    candidate.provenance = Provenance::tpe_ei;
    double ei = 0.0;
    for (std::size_t dim = 0; dim < space.domains.size(); ++dim) {
      const auto& [name, domain] = space.domains[dim];
      const DimModel& m = models[dim];
      if (m.continuous) {
        const double u = m.good_kde.sample(domain, rng);
        ei += m.good_kde.log_density(u) - m.rest_kde.log_density(u);
        candidate.values.emplace_back(name, std::clamp(from_u(domain, u), domain.lo, domain.hi));
      } else {
        const std::size_t idx = m.good_pmf.sample(rng);
        ei += m.good_pmf.log_mass(idx) - m.rest_pmf.log_mass(idx);
        if (domain.kind == Domain::Kind::choice) {
          candidate.values.emplace_back(name, domain.choices[idx]);
        } else {
          candidate.values.emplace_back(name, domain.int_choices[idx]);
        }
      }
    }
    if (ei > best_ei) {
      best_ei = ei;
      best = std::move(candidate);
    }
  }
  return best;
}

RandomSearcher::RandomSearcher(ParamSpace space, std::uint64_t seed)
    : space_(std::move(space)), rng_(derive_seed(seed, "random-search")) {
  space_.validate();
}

ConfigSample RandomSearcher::suggest(const std::vector<Observation>&) { return sample_random(space_, rng_); }

TpeSearcher::TpeSearcher(ParamSpace space, TpeConfig cfg, std::uint64_t seed)
    : space_(std::move(space)), cfg_(cfg), rng_(derive_seed(seed, "tpe-search")) {
  space_.validate();
  if (!(cfg_.gamma > 0.0 && cfg_.gamma < 1.0)) throw ConfigError("tpe gamma must lie in (0,1)");
  if (cfg_.n_candidates < 1) throw ConfigError("tpe n_candidates must be >= 1");
}

ConfigSample TpeSearcher::suggest(const std::vector<Observation>& history) {
  return tpe_suggest(space_, history, cfg_, rng_);
}

std::unique_ptr<Searcher> make_searcher(const std::string& kind, const ParamSpace& space, const TpeConfig& tpe,
                                        std::uint64_t seed) {
  if (kind == "random") return std::make_unique<RandomSearcher>(space, seed);
  if (kind == "tpe") return std::make_unique<TpeSearcher>(space, tpe, seed);
  throw ConfigError("unknown searcher '" + kind + "'");
}

std::vector<ConfigSample> generate_configs(const ParamSpace& space, int n, Searcher& searcher,
                                           const HistoryProvider& history) {
  space.validate();
  if (n <= 0) throw ConfigError("config count must be >= 1");
  std::vector<ConfigSample> configs;
  configs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const std::vector<Observation> snapshot = history ? history() : std::vector<Observation>{};
    configs.push_back(searcher.suggest(snapshot));
  }
  return configs;
}

}  // namespace coretune
