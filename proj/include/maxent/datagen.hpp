#pragma once

// Training pairs (lambda, p) of standardized maximum-entropy densities, their
// feature/target scaling, and CSV + JSON-sidecar persistence.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "maxent/error.hpp"
#include "maxent/io.hpp"
#include "maxent/med.hpp"
#include "maxent/parallel.hpp"
#include "maxent/quadrature.hpp"

namespace maxent {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Default moment box for N <= 8: the first N components of the N = 8 box.
inline std::vector<Interval> default_moment_box(int n_moments, double epsilon = 1e-10) {
  const std::vector<Interval> full = {{-epsilon, epsilon}, {1.0 - epsilon, 1.0 + epsilon}, {-1.0, 1.0}, {1.0, 4.0},
                                      {-4.0, 4.0},         {1.0, 15.0},                    {-25.0, 1.0}, {1.0, 110.0}};
  if (n_moments < 2 || n_moments > 8) {
    throw DomainError("default moment box is defined for 2 <= N <= 8, got N = " + std::to_string(n_moments));
  }
  return {full.begin(), full.begin() + n_moments};
}

struct SamplingSpec {
  int n_moments = 8;
  double b = 10.0;
  std::vector<Interval> lambda_box;  // per-component override of [-b, b]; empty = uniform box
  std::vector<Interval> omega_p;
  double epsilon = 1e-10;
  int max_inner_iters = 100;
  long max_rejections = 1000000;

  static SamplingSpec for_moments(int n, double b = 10.0, double epsilon = 1e-10) {
    SamplingSpec s;
    s.n_moments = n;
    s.b = b;
    s.epsilon = epsilon;
    s.omega_p = default_moment_box(n, epsilon);
    return s;
  }

  Interval lambda_range(int i) const { return lambda_box.empty() ? Interval{-b, b} : lambda_box[i]; }

  void validate() const {
    if (n_moments < 3) throw DomainError("n_moments must be at least 3, got " + std::to_string(n_moments));
    if (!(b > 0.0)) throw DomainError("lambda box half-width b must be positive");
    if (!(epsilon > 0.0)) throw DomainError("epsilon must be positive");
    if (max_inner_iters < 1 || max_rejections < 1) throw DomainError("iteration limits must be positive");
    if (static_cast<int>(omega_p.size()) != n_moments) {
      throw DomainError("moment box has " + std::to_string(omega_p.size()) + " intervals, expected N = " +
                        std::to_string(n_moments));
    }
    if (!lambda_box.empty() && static_cast<int>(lambda_box.size()) != n_moments) {
      throw DomainError("lambda box override has " + std::to_string(lambda_box.size()) + " intervals, expected N = " +
                        std::to_string(n_moments));
    }
    for (const auto& iv : omega_p) {
      if (!(iv.lo <= iv.hi)) throw DomainError("moment box interval with lo > hi");
    }
    for (const auto& iv : lambda_box) {
      if (!(iv.lo <= iv.hi)) throw DomainError("lambda box interval with lo > hi");
    }
    if (!(omega_p[0].lo >= -epsilon && omega_p[0].hi <= epsilon && omega_p[1].lo >= 1.0 - epsilon &&
          omega_p[1].hi <= 1.0 + epsilon)) {
      throw DomainError("moment box components 1 and 2 must lie within [-eps, eps] and [1-eps, 1+eps]");
    }
  }

  bool in_moment_box(const Eigen::VectorXd& p) const {
    for (int i = 0; i < n_moments; ++i) {
      if (!omega_p[i].contains(p[i])) return false;
    }
    return true;
  }
};

/// Why draws were discarded; accumulated across a generation run.
struct SampleStats {
  long draws = 0;
  long accepted = 0;
  long early_rejections = 0;  // |mu| > 5 or sigma > 3 at the first measurement
  long inner_failures = 0;    // standardization loop did not contract
  long box_rejections = 0;    // p outside the moment box
  long saturations = 0;       // density not representable

  double acceptance_rate() const { return draws > 0 ? static_cast<double>(accepted) / static_cast<double>(draws) : 0.0; }

  SampleStats& operator+=(const SampleStats& o) {
    draws += o.draws;
    accepted += o.accepted;
    early_rejections += o.early_rejections;
    inner_failures += o.inner_failures;
    box_rejections += o.box_rejections;
    saturations += o.saturations;
    return *this;
  }
};

struct SamplePair {
  LagrangeVector lambda;
  MomentVector p;
};

namespace detail {

inline std::pair<double, double> mean_and_second(const LagrangeVector& lambda, const QuadratureRule& rule) {
  const auto m = moments_of(MaxEntDensity(lambda, rule), 2);
  return {m.values[0], m.values[1]};
}

}  // namespace detail

/// Draws multipliers from the lambda box, standardizes the density by
/// repeated rescaling and keeps it if its moments fall inside the moment box.
inline SamplePair sample_standardized_pair(const SamplingSpec& spec, const QuadratureRule& rule, std::mt19937_64& rng,
                                           SampleStats* stats = nullptr) {
  spec.validate();
  SampleStats local;
  SampleStats& st = stats ? *stats : local;
  const int n = spec.n_moments;
  long rejections = 0;
  for (;;) {
    if (rejections >= spec.max_rejections) {
      throw GenerationExhausted("no acceptable sample after " + std::to_string(rejections) +
                                    " draws (acceptance rate " + std::to_string(st.acceptance_rate()) + ")",
                                st.acceptance_rate());
    }
    ++st.draws;
    ++rejections;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) {
      const Interval r = spec.lambda_range(i);
      v[i] = std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
    }
    LagrangeVector lambda(std::move(v));
    try {
      auto [mu, second] = detail::mean_and_second(lambda, rule);
      double var = second - mu * mu;
      if (!(var > 0.0) || std::abs(mu) > 5.0 || std::sqrt(var) > 3.0) {
        ++st.early_rejections;
        continue;
      }
      bool standardized = false;
      for (int it = 0; it < spec.max_inner_iters; ++it) {
        lambda = rescale_multipliers(lambda, mu, std::sqrt(var));
        std::tie(mu, second) = detail::mean_and_second(lambda, rule);
        var = second - mu * mu;
        if (!(var > 0.0) || !lambda.finite()) break;
        if (std::abs(mu) <= spec.epsilon && std::abs(second - 1.0) <= spec.epsilon) {
          standardized = true;
          break;
        }
      }
      if (!standardized) {
        ++st.inner_failures;
        continue;
      }
      MomentVector p = moments_of(MaxEntDensity(lambda, rule), n);
      if (!spec.in_moment_box(p.values)) {
        ++st.box_rejections;
        continue;
      }
      p.standardized = true;
      ++st.accepted;
      return {std::move(lambda), std::move(p)};
    } catch (const SaturationError&) {
      ++st.saturations;
    }
  }
}

struct DatasetMeta {
  SamplingSpec spec;
  VelocityDomain domain;
  int quad_order = kDefaultQuadOrder;
  std::uint64_t seed = 0;
  double generation_seconds = 0.0;  // not persisted, so seeded reruns write identical files
};

/// M pairs stored row-wise: moments(k, :) = p of pair k, lambdas(k, :) = its multipliers.
struct Dataset {
  DatasetMeta meta;
  Eigen::MatrixXd moments;
  Eigen::MatrixXd lambdas;
  std::vector<double> pair_seconds;
  SampleStats stats;

  int size() const { return static_cast<int>(moments.rows()); }
  int n_moments() const { return static_cast<int>(moments.cols()); }
  MomentVector p(int k) const {
    MomentVector m(Eigen::VectorXd(moments.row(k).transpose()));
    m.standardized = true;
    return m;
  }
  LagrangeVector lambda(int k) const { return LagrangeVector(Eigen::VectorXd(lambdas.row(k).transpose())); }

  /// Rows [first, first + count) as a new dataset sharing the metadata.
  Dataset head(int count, int first = 0) const {
    if (first < 0 || count < 0 || first + count > size()) throw DomainError("dataset slice out of range");
    Dataset d;
    d.meta = meta;
    d.moments = moments.middleRows(first, count);
    d.lambdas = lambdas.middleRows(first, count);
    if (static_cast<int>(pair_seconds.size()) == size()) {
      d.pair_seconds.assign(pair_seconds.begin() + first, pair_seconds.begin() + first + count);
    }
    return d;
  }
};

/// Seed of the RNG stream that produces pair k.
inline std::seed_seq pair_seed_seq(std::uint64_t seed, std::uint64_t k) {
  return std::seed_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                       static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

/// M accepted pairs. Pair k is drawn from its own stream, so the result does
/// not depend on the thread count.
inline Dataset generate_dataset(int count, const SamplingSpec& spec, const QuadratureRule& rule, std::uint64_t seed,
                                int threads = 0) {
  if (count < 1) throw DomainError("dataset size must be at least 1");
  spec.validate();
  const int n = spec.n_moments;
  Dataset ds;
  ds.meta = {spec, rule.domain(), rule.order(), seed, 0.0};
  ds.moments.resize(count, n);
  ds.lambdas.resize(count, n);
  ds.pair_seconds.assign(count, 0.0);
  std::vector<SampleStats> stats(count);
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(static_cast<std::size_t>(count), threads, [&](std::size_t k) {
    auto sseq = pair_seed_seq(seed, k);
    std::mt19937_64 rng(sseq);
    const auto start = std::chrono::steady_clock::now();
    const SamplePair pair = sample_standardized_pair(spec, rule, rng, &stats[k]);
    ds.pair_seconds[k] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ds.moments.row(static_cast<Eigen::Index>(k)) = pair.p.values.transpose();
    ds.lambdas.row(static_cast<Eigen::Index>(k)) = pair.lambda.values.transpose();
  });
  ds.meta.generation_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& s : stats) ds.stats += s;
  return ds;
}

/// Largest |moments_of(lambda) - p| over the dataset, using its own quadrature settings.
inline double max_moment_residual(const Dataset& ds) {
  const QuadratureRule rule(ds.meta.domain, ds.meta.quad_order);
  double worst = 0.0;
  for (int k = 0; k < ds.size(); ++k) {
    const auto m = moments_of(MaxEntDensity(ds.lambda(k), rule), ds.n_moments());
    worst = std::max(worst, (m.values - ds.moments.row(k).transpose()).lpNorm<Eigen::Infinity>());
  }
  return worst;
}

/// Mean/std shift of GP inputs (p_3..p_N) and targets (lambda_1..lambda_N).
struct ScalingStats {
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_std;
  Eigen::VectorXd target_mean;
  Eigen::VectorXd target_std;

  int n_moments() const { return static_cast<int>(target_mean.size()); }
  int n_features() const { return static_cast<int>(input_mean.size()); }

  /// Full moment vector(s) (N columns) to scaled features (N - 2 columns).
  Eigen::MatrixXd scale_inputs(const Eigen::MatrixXd& moments) const {
    check_cols(moments.cols(), n_moments(), "moment");
    return ((moments.rightCols(n_features()).rowwise() - input_mean.transpose()).array().rowwise() /
            input_std.transpose().array())
        .matrix();
  }
  Eigen::VectorXd scale_input(const Eigen::VectorXd& p) const {
    check_cols(p.size(), n_moments(), "moment");
    return ((p.tail(n_features()) - input_mean).array() / input_std.array()).matrix();
  }
  Eigen::MatrixXd unscale_inputs(const Eigen::MatrixXd& scaled) const {
    check_cols(scaled.cols(), n_features(), "feature");
    return ((scaled.array().rowwise() * input_std.transpose().array()).matrix().rowwise() + input_mean.transpose());
  }
  Eigen::MatrixXd scale_targets(const Eigen::MatrixXd& lambdas) const {
    check_cols(lambdas.cols(), n_moments(), "target");
    return ((lambdas.rowwise() - target_mean.transpose()).array().rowwise() / target_std.transpose().array()).matrix();
  }
  Eigen::MatrixXd unscale_targets(const Eigen::MatrixXd& scaled) const {
    check_cols(scaled.cols(), n_moments(), "target");
    return ((scaled.array().rowwise() * target_std.transpose().array()).matrix().rowwise() + target_mean.transpose());
  }

 private:
  static void check_cols(Eigen::Index got, int expected, const char* what) {
    if (got != expected) {
      throw DomainError(std::string(what) + " vector has " + std::to_string(got) + " entries, expected " +
                        std::to_string(expected));
    }
  }
};

namespace detail {

inline void column_stats(const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::VectorXd& stdev, const char* what) {
  mean = x.colwise().mean().transpose();
  stdev = ((x.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
  for (Eigen::Index j = 0; j < stdev.size(); ++j) {
    if (!(stdev[j] > 0.0)) {
      throw DegenerateError(std::string("degenerate dataset: ") + what + " column " + std::to_string(j + 1) +
                            " has zero standard deviation");
    }
  }
}

}  // namespace detail

/// Population mean and standard deviation per column. p_1 and p_2 are constant
/// after standardization and are left out of the inputs.
inline ScalingStats compute_scaling(const Dataset& ds) {
  if (ds.size() < 2) throw DomainError("scaling needs at least 2 pairs, got " + std::to_string(ds.size()));
  if (ds.n_moments() < 3) throw DomainError("scaling needs N >= 3");
  ScalingStats s;
  detail::column_stats(ds.moments.rightCols(ds.n_moments() - 2), s.input_mean, s.input_std, "moment");
  detail::column_stats(ds.lambdas, s.target_mean, s.target_std, "lambda");
  return s;
}

// ---------------------------------------------------------------- persistence

inline std::filesystem::path dataset_meta_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta.json");
  return p;
}

inline nlohmann::json intervals_to_json(const std::vector<Interval>& box) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& iv : box) j.push_back({iv.lo, iv.hi});
  return j;
}

inline std::vector<Interval> intervals_from_json(const nlohmann::json& j) {
  std::vector<Interval> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2) throw ParseError("interval must be a [lo, hi] pair");
    out.push_back({e[0].get<double>(), e[1].get<double>()});
  }
  return out;
}

inline nlohmann::json dataset_meta_json(const Dataset& ds) {
  const auto& m = ds.meta;
  nlohmann::json j = {{"n_moments", ds.n_moments()},
                      {"v_min", m.domain.v_min},
                      {"v_max", m.domain.v_max},
                      {"quad_order", m.quad_order},
                      {"b", m.spec.b},
                      {"omega_p", intervals_to_json(m.spec.omega_p)},
                      {"epsilon", m.spec.epsilon},
                      {"seed", m.seed},
                      {"count", ds.size()},
                      {"max_inner_iters", m.spec.max_inner_iters},
                      {"max_rejections", m.spec.max_rejections}};
  if (!m.spec.lambda_box.empty()) j["lambda_box"] = intervals_to_json(m.spec.lambda_box);
  return j;
}

inline std::string dataset_csv(const Dataset& ds) {
  const int n = ds.n_moments();
  std::string out;
  for (int i = 1; i <= n; ++i) out += "p" + std::to_string(i) + ",";
  for (int i = 1; i <= n; ++i) out += "lambda" + std::to_string(i) + (i < n ? "," : "\n");
  for (int k = 0; k < ds.size(); ++k) {
    for (int i = 0; i < n; ++i) out += io::format_double(ds.moments(k, i)) + ",";
    for (int i = 0; i < n; ++i) out += io::format_double(ds.lambdas(k, i)) + (i + 1 < n ? "," : "\n");
  }
  return out;
}

/// Writes `path` (CSV) and its `.meta.json` sidecar, each atomically.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, dataset_csv(ds));
  io::write_file_atomic(dataset_meta_path(path), dataset_meta_json(ds).dump(2) + "\n");
}

namespace detail {

inline DatasetMeta parse_dataset_meta(const nlohmann::json& j, int n_from_header) {
  DatasetMeta m;
  try {
    const int n = j.at("n_moments").get<int>();
    if (n != n_from_header) {
      throw ParseError("metadata says n_moments = " + std::to_string(n) + " but the CSV header has N = " +
                       std::to_string(n_from_header));
    }
    m.spec.n_moments = n;
    m.domain = {j.at("v_min").get<double>(), j.at("v_max").get<double>()};
    m.quad_order = j.at("quad_order").get<int>();
    m.spec.b = j.at("b").get<double>();
    m.spec.epsilon = j.at("epsilon").get<double>();
    m.spec.omega_p = intervals_from_json(j.at("omega_p"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.spec.max_inner_iters = j.value("max_inner_iters", m.spec.max_inner_iters);
    m.spec.max_rejections = j.value("max_rejections", m.spec.max_rejections);
    if (j.contains("lambda_box")) m.spec.lambda_box = intervals_from_json(j.at("lambda_box"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid dataset metadata: ") + e.what());
  }
  return m;
}

}  // namespace detail

/// Reads a dataset and its sidecar. With `verify`, every pair is re-checked
/// against moments_of(lambda) under the stored quadrature settings (1e-8).
inline Dataset load_dataset(const std::filesystem::path& path, bool verify = true) {
  const std::string text = io::read_file(path);
  std::vector<std::string_view> lines;
  for (auto& l : io::split(text, '\n')) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    lines.push_back(l);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError("empty dataset file '" + path.string() + "'", 1);

  const auto header = io::split(lines[0]);
  if (header.size() % 2 != 0 || header.size() < 2) {
    throw ParseError("header must list p1..pN,lambda1..lambdaN; got " + std::to_string(header.size()) + " columns", 1);
  }
  const int n = static_cast<int>(header.size() / 2);
  for (int i = 0; i < n; ++i) {
    if (header[i] != "p" + std::to_string(i + 1) || header[n + i] != "lambda" + std::to_string(i + 1)) {
      throw ParseError("unexpected header column; expected p1..p" + std::to_string(n) + ",lambda1..lambda" +
                           std::to_string(n),
                       1);
    }
  }

  Dataset ds;
  const auto meta_path = dataset_meta_path(path);
  if (std::filesystem::exists(meta_path)) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(meta_path));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("invalid JSON in '" + meta_path.string() + "': " + e.what());
    }
    ds.meta = detail::parse_dataset_meta(j, n);
  } else {
    ds.meta.spec = SamplingSpec::for_moments(std::min(n, 8));
    ds.meta.spec.n_moments = n;
  }

  const int rows = static_cast<int>(lines.size()) - 1;
  if (rows < 1) throw ParseError("dataset has no rows", 2);
  ds.moments.resize(rows, n);
  ds.lambdas.resize(rows, n);
  std::set<std::vector<double>> seen;
  for (int k = 0; k < rows; ++k) {
    const long line_no = k + 2;
    const auto fields = io::split(lines[k + 1]);
    if (static_cast<int>(fields.size()) != 2 * n) {
      throw ParseError("expected " + std::to_string(2 * n) + " columns for N = " + std::to_string(n) + ", got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    std::vector<double> row(2 * n);
    for (int i = 0; i < 2 * n; ++i) row[i] = io::parse_double(fields[i], line_no);
    for (int i = 0; i < n; ++i) {
      ds.moments(k, i) = row[i];
      ds.lambdas(k, i) = row[n + i];
    }
    if (!seen.insert(row).second) throw ParseError("duplicate pair", line_no);
  }
  if (verify) {
    const double r = max_moment_residual(ds);
    if (!(r <= 1e-8)) {
      throw ValidityError("stored pairs do not reproduce their moments (max residual " + std::to_string(r) +
                          "); quadrature settings may differ from generation");
    }
  }
  return ds;
}

}  // namespace maxent
