#pragma once

// Numerical experiments: bi-modal recovery (clean and noisy), BGK and BKW
// relaxation, realizability scans, kernel comparison and the speedup
// benchmark. Each produces a JSON tree plus flat CSV tables.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maxent/closure.hpp"
#include "maxent/datagen.hpp"
#include "maxent/gp.hpp"
#include "maxent/io.hpp"
#include "maxent/med.hpp"
#include "maxent/parallel.hpp"
#include "maxent/quadrature.hpp"

namespace maxent {

/// Rule for integrating analytic densities (truth moments, KL).
inline constexpr int kReferenceOrder = 256;

inline QuadratureRule reference_rule(const VelocityDomain& domain = {}) { return build_rule(domain, kReferenceOrder); }

// ---------------------------------------------------------------- reports

struct CsvTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    if (row.size() != columns.size()) throw DomainError("CSV row width does not match table '" + name + "'");
    rows.push_back(std::move(row));
  }
  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
    out += "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
      out += "\n";
    }
    return out;
  }
};

struct ExperimentReport {
  std::string name;
  nlohmann::json data = nlohmann::json::object();
  std::vector<CsvTable> tables;

  CsvTable& table(const std::string& table_name) {
    for (auto& t : tables) {
      if (t.name == table_name) return t;
    }
    throw DomainError("no table '" + table_name + "' in report " + name);
  }
  const CsvTable& table(const std::string& table_name) const {
    return const_cast<ExperimentReport*>(this)->table(table_name);
  }
};

inline std::string fmt(double v) { return io::format_double(v); }

/// Writes <dir>/<name>.json and <dir>/<name>_<table>.csv; the JSON lists
/// every table's columns.
inline std::vector<std::filesystem::path> write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  nlohmann::json j = report.data;
  j["experiment"] = report.name;
  nlohmann::json tables = nlohmann::json::object();
  for (const auto& t : report.tables) {
    const auto path = dir / (report.name + "_" + t.name + ".csv");
    io::write_file_atomic(path, t.text());
    tables[t.name] = {{"file", path.filename().string()}, {"columns", t.columns}};
    written.push_back(path);
  }
  j["csv_tables"] = tables;
  const auto path = dir / (report.name + ".json");
  io::write_file_atomic(path, j.dump(2) + "\n");
  written.insert(written.begin(), path);
  return written;
}

inline nlohmann::json to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// ---------------------------------------------------------------- shared helpers

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline double normal_pdf(double v, double mean, double sd) {
  const double z = (v - mean) / sd;
  return std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

inline std::uint64_t case_seed(std::uint64_t seed, std::uint64_t k) {
  std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(k)};
  std::mt19937_64 g(s);
  return g();
}

}  // namespace detail

inline Eigen::ArrayXd sample_at_nodes(const std::function<double(double)>& f, const QuadratureRule& rule) {
  Eigen::ArrayXd out(rule.size());
  for (Eigen::Index k = 0; k < rule.size(); ++k) out[k] = f(rule.nodes()[k]);
  return out;
}

/// p_k = sum_j w_j f_j v_j^k for k = 1..n; f is not renormalized.
inline MomentVector raw_moments_at_nodes(const Eigen::ArrayXd& f, const QuadratureRule& rule, int n) {
  if (f.size() != rule.size()) throw DomainError("sample count does not match the rule");
  Eigen::VectorXd p(n);
  Eigen::ArrayXd term = rule.weights() * f;
  for (int k = 0; k < n; ++k) {
    term *= rule.nodes();
    p[k] = term.sum();
  }
  return MomentVector(std::move(p));
}

/// KL(f || closure) in the original coordinates; the closed density is
/// renormalized on the reference rule over its own (standardized) domain.
inline double kl_to_closure(const Eigen::ArrayXd& f, const QuadratureRule& rule, const ClosureResult& c) {
  if (f.size() != rule.size()) throw DomainError("sample count does not match the rule");
  const MaxEntDensity fine(c.lambda_hat, reference_rule(c.density.domain()));
  const double log_sigma = std::log(c.sigma);
  double sum = 0.0;
  for (Eigen::Index k = 0; k < f.size(); ++k) {
    if (f[k] < 0.0 || !std::isfinite(f[k])) throw DomainError("reference density must be finite and non-negative");
    if (f[k] == 0.0) continue;
    const double log_g = fine.log_value((rule.nodes()[k] - c.mu) / c.sigma) - log_sigma;
    sum += rule.weights()[k] * f[k] * (std::log(f[k]) - log_g);
  }
  return sum;
}

/// Closure of one truth density with the diagnostics every experiment reports.
struct CaseMetrics {
  int n_moments = 0;
  double kl = 0.0;
  double moment_error = 0.0;
  std::optional<double> lambda_error;  // vs Newton on the same standardized moments
  Eigen::VectorXd lambda_hat;
  Eigen::VectorXd lambda_newton;
  Eigen::VectorXd variance;
  Eigen::VectorXd input_moments;  // standardized
  Eigen::VectorXd reconstructed_moments;
  double mu = 0.0, sigma = 1.0;
  double gp_seconds = 0.0, newton_seconds = 0.0;
  bool out_of_box = false;
  std::string warning;
  std::string newton_error;
  Eigen::VectorXd grid_estimate;  // closed density on the plot grid, original coordinates

  nlohmann::json json() const {
    nlohmann::json j = {{"n_moments", n_moments},
                        {"kl", kl},
                        {"moment_relative_error", moment_error},
                        {"lambda_hat", to_json(lambda_hat)},
                        {"posterior_variance", to_json(variance)},
                        {"mean_posterior_variance", variance.mean()},
                        {"standardized_moments", to_json(input_moments)},
                        {"reconstructed_moments", to_json(reconstructed_moments)},
                        {"mu", mu},
                        {"sigma", sigma},
                        {"gp_seconds", gp_seconds},
                        {"newton_seconds", newton_seconds},
                        {"out_of_box", out_of_box}};
    j["lambda_relative_error"] = lambda_error ? nlohmann::json(*lambda_error) : nlohmann::json(nullptr);
    if (lambda_newton.size()) j["lambda_newton"] = to_json(lambda_newton);
    if (!warning.empty()) j["warning"] = warning;
    if (!newton_error.empty()) j["newton_error"] = newton_error;
    return j;
  }
};

inline Eigen::VectorXd plot_grid(const VelocityDomain& domain, int points = 401) {
  return Eigen::VectorXd::LinSpaced(points, domain.v_min, domain.v_max);
}

/// Closes the raw moments (order N) of `f` sampled on `rule`, measures KL
/// against `f`, and solves the same standardized moments with Newton.
inline CaseMetrics evaluate_closure(const GPModel& model, const Eigen::ArrayXd& f, const QuadratureRule& rule,
                                    const Eigen::VectorXd& grid, std::uint64_t newton_seed,
                                    const SolverOptions& newton = {}) {
  CaseMetrics m;
  m.n_moments = model.n_moments();
  const MomentVector raw = raw_moments_at_nodes(f, rule, m.n_moments);
  const QuadratureRule model_rule = build_rule(model.domain, model.quad_order);
  auto t0 = std::chrono::steady_clock::now();
  const ClosureResult c = close_moments(model, raw, model_rule);
  m.gp_seconds = detail::seconds_since(t0);
  m.kl = kl_to_closure(f, rule, c);
  m.lambda_hat = c.lambda_hat.values;
  m.variance = c.posterior_variance;
  m.input_moments = c.standardized_input.values;
  m.reconstructed_moments = c.reconstructed_moments.values;
  m.moment_error = moment_relative_error(c.reconstructed_moments, c.standardized_input);
  m.mu = c.mu;
  m.sigma = c.sigma;
  m.out_of_box = c.out_of_box;
  m.warning = c.warning;
  t0 = std::chrono::steady_clock::now();
  try {
    const auto sol = newton_solve(c.standardized_input, model_rule, newton, newton_seed);
    m.newton_seconds = detail::seconds_since(t0);
    m.lambda_newton = sol.lambda.values;
    m.lambda_error = lambda_relative_error(c.lambda_hat, sol.lambda);
  } catch (const Error& e) {
    m.newton_seconds = detail::seconds_since(t0);
    m.newton_error = e.what();
  }
  const MaxEntDensity fine(c.lambda_hat, reference_rule(c.density.domain()));
  m.grid_estimate.resize(grid.size());
  for (Eigen::Index k = 0; k < grid.size(); ++k) {
    m.grid_estimate[k] = std::exp(fine.log_value((grid[k] - c.mu) / c.sigma)) / c.sigma;
  }
  return m;
}

inline std::vector<std::string> case_row_prefix(const CaseMetrics& m) {
  return {std::to_string(m.n_moments), fmt(m.kl), fmt(m.moment_error), m.lambda_error ? fmt(*m.lambda_error) : "nan",
          fmt(m.variance.mean()), m.out_of_box ? "1" : "0"};
}

inline const std::vector<std::string> kCaseColumns = {"n_moments", "kl", "moment_relative_error",
                                                      "lambda_relative_error", "mean_posterior_variance", "out_of_box"};

inline std::vector<std::string> with_case_columns(std::vector<std::string> lead) {
  lead.insert(lead.end(), kCaseColumns.begin(), kCaseColumns.end());
  return lead;
}

// ---------------------------------------------------------------- bi-modal

struct BiModalParams {
  double mu1 = 0.8;
  double sigma1 = 0.3;

  double mu2() const { return -mu1; }
  double sigma2() const { return std::sqrt(2.0 - (sigma1 * sigma1 + 2.0 * mu1 * mu1)); }
  void validate() const {
    if (!(sigma1 > 0.0)) throw ValidityError("bi-modal sigma_1 must be positive");
    if (!(2.0 - (sigma1 * sigma1 + 2.0 * mu1 * mu1) > 0.0)) {
      throw ValidityError("bi-modal parameters need sigma_1^2 + 2 mu_1^2 < 2");
    }
  }
  std::string label() const { return "(" + fmt(mu1) + "," + fmt(sigma1) + ")"; }
};

inline std::vector<BiModalParams> default_bimodal_cases() { return {{0.8, 0.3}, {0.9, 0.2}, {0.95, 0.15}}; }

inline double bimodal_density(const BiModalParams& b, double v) {
  b.validate();
  return 0.5 * (detail::normal_pdf(v, b.mu1, b.sigma1) + detail::normal_pdf(v, b.mu2(), b.sigma2()));
}

/// The equilibrium baseline: N(0, 1) truncated to the domain.
inline MaxEntDensity truncated_standard_normal(int n_moments, const QuadratureRule& rule) {
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(n_moments);
  lambda[1] = 0.5;
  return MaxEntDensity(LagrangeVector(lambda), rule);
}

/// Shared by the clean and noisy runs: noise_sigma = 0 reproduces the clean run.
inline ExperimentReport run_bimodal_impl(const std::string& name, const std::vector<const GPModel*>& models,
                                         const std::vector<BiModalParams>& cases, double noise_sigma,
                                         std::uint64_t seed, int threads) {
  if (models.empty()) throw DomainError("bi-modal experiment needs at least one model");
  if (noise_sigma < 0.0) throw DomainError("noise sigma must be non-negative");
  for (const auto& c : cases) c.validate();
  const VelocityDomain domain = models.front()->domain;
  const QuadratureRule rule = reference_rule(domain);
  const Eigen::VectorXd grid = plot_grid(domain);

  struct CaseData {
    Eigen::ArrayXd f;
    int clamped = 0;
    double baseline_kl = 0.0;
  };
  std::vector<CaseData> data(cases.size());
  for (std::size_t c = 0; c < cases.size(); ++c) {
    data[c].f = sample_at_nodes([&](double v) { return bimodal_density(cases[c], v); }, rule);
    if (noise_sigma > 0.0) {
      std::mt19937_64 rng(detail::case_seed(seed, c));
      std::normal_distribution<double> eps(0.0, noise_sigma);
      for (auto& x : data[c].f) {
        x *= 1.0 + eps(rng);
        if (x < 0.0) {
          x = 0.0;
          ++data[c].clamped;
        }
      }
    }
    data[c].baseline_kl = kl_divergence_at_nodes(data[c].f, truncated_standard_normal(2, rule), rule);
  }

  const std::size_t jobs = cases.size() * models.size();
  std::vector<CaseMetrics> metrics(jobs);
  parallel_for(jobs, threads, [&](std::size_t job) {
    const std::size_t c = job / models.size(), i = job % models.size();
    metrics[job] = evaluate_closure(*models[i], data[c].f, rule, grid, detail::case_seed(seed, 1000 + job));
  });

  ExperimentReport rep;
  rep.name = name;
  rep.data["noise_sigma"] = noise_sigma;
  rep.data["seed"] = seed;
  rep.data["reference_order"] = kReferenceOrder;
  rep.data["grid"] = to_json(grid);
  CsvTable summary{"summary", with_case_columns({"mu1", "sigma1", "baseline_kl", "clamped_nodes"}), {}};
  CsvTable dens{"densities", {"case", "v", "exact"}, {}};
  for (const auto* m : models) dens.columns.push_back("estimate_n" + std::to_string(m->n_moments()));
  nlohmann::json jc = nlohmann::json::array();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    nlohmann::json entry = {{"mu1", cases[c].mu1},
                            {"sigma1", cases[c].sigma1},
                            {"mu2", cases[c].mu2()},
                            {"sigma2", cases[c].sigma2()},
                            {"baseline_kl", data[c].baseline_kl},
                            {"clamped_nodes", data[c].clamped}};
    nlohmann::json per_n = nlohmann::json::array();
    for (std::size_t i = 0; i < models.size(); ++i) {
      const auto& m = metrics[c * models.size() + i];
      per_n.push_back(m.json());
      auto row = std::vector<std::string>{fmt(cases[c].mu1), fmt(cases[c].sigma1), fmt(data[c].baseline_kl),
                                          std::to_string(data[c].clamped)};
      const auto tail = case_row_prefix(m);
      row.insert(row.end(), tail.begin(), tail.end());
      summary.add(std::move(row));
    }
    entry["results"] = std::move(per_n);
    jc.push_back(std::move(entry));
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
      std::vector<std::string> row{std::to_string(c), fmt(grid[k]), fmt(bimodal_density(cases[c], grid[k]))};
      for (std::size_t i = 0; i < models.size(); ++i) row.push_back(fmt(metrics[c * models.size() + i].grid_estimate[k]));
      dens.add(std::move(row));
    }
  }
  rep.data["cases"] = std::move(jc);
  rep.tables = {std::move(summary), std::move(dens)};
  return rep;
}

inline ExperimentReport run_bimodal(const std::vector<const GPModel*>& models,
                                    const std::vector<BiModalParams>& cases = default_bimodal_cases(),
                                    std::uint64_t seed = 0, int threads = 0) {
  return run_bimodal_impl("bimodal", models, cases, 0.0, seed, threads);
}

/// Multiplicative per-node noise f (1 + eps), eps ~ N(0, noise_sigma^2), on
/// the reference rule's nodes; negative values are clamped to 0 and counted.
inline ExperimentReport run_noisy_bimodal(const std::vector<const GPModel*>& models,
                                          const std::vector<BiModalParams>& cases, double noise_sigma,
                                          std::uint64_t seed, int threads = 0) {
  return run_bimodal_impl("noisy", models, cases, noise_sigma, seed, threads);
}

// ---------------------------------------------------------------- BGK

struct BGKSpec {
  double nu = 0.25;
  std::vector<double> times = {0.0, 3.0, 8.0, 20.0};
  BiModalParams initial{0.98, 0.2};

  void validate() const {
    if (!(nu > 0.0)) throw DomainError("BGK collision frequency must be positive");
    for (std::size_t i = 0; i < times.size(); ++i) {
      if (times[i] < 0.0 || (i > 0 && !(times[i] > times[i - 1]))) {
        throw DomainError("BGK times must be non-negative and increasing");
      }
    }
    initial.validate();
  }
};

/// Exact BGK solution: relaxation of the initial bi-modal density toward N(0, 1).
inline double bgk_exact_density(const BGKSpec& spec, double t, double v) {
  const double e = std::exp(-spec.nu * t);
  return (1.0 - e) * detail::normal_pdf(v, 0.0, 1.0) + e * bimodal_density(spec.initial, v);
}

/// p(t) = (1 - e^{-nu t}) p_eq + e^{-nu t} p(0), with both endpoint moment
/// vectors integrated on `rule` (p_eq from the truncated N(0, 1)).
inline MomentVector bgk_exact_moments(const BGKSpec& spec, double t, const QuadratureRule& rule, int n_moments) {
  if (t < 0.0) throw DomainError("BGK time must be non-negative");
  const MomentVector p_eq = moments_of(truncated_standard_normal(2, rule), n_moments);
  const MomentVector p0 =
      raw_moments_at_nodes(sample_at_nodes([&](double v) { return bimodal_density(spec.initial, v); }, rule), rule,
                           n_moments);
  const double e = std::exp(-spec.nu * t);
  return MomentVector(((1.0 - e) * p_eq.values + e * p0.values).eval());
}

inline ExperimentReport run_bgk(const std::vector<const GPModel*>& models, const BGKSpec& spec = {},
                                std::uint64_t seed = 0) {
  spec.validate();
  if (models.empty()) throw DomainError("BGK experiment needs at least one model");
  const VelocityDomain domain = models.front()->domain;
  const QuadratureRule rule = reference_rule(domain);
  const Eigen::VectorXd grid = plot_grid(domain);
  ExperimentReport rep;
  rep.name = "bgk";
  rep.data["nu"] = spec.nu;
  rep.data["initial"] = {{"mu1", spec.initial.mu1}, {"sigma1", spec.initial.sigma1}};
  rep.data["grid"] = to_json(grid);
  CsvTable summary{"summary", with_case_columns({"t", "gp_seconds", "newton_seconds", "speedup"}), {}};
  CsvTable dens{"densities", {"t", "v", "exact"}, {}};
  for (const auto* m : models) dens.columns.push_back("estimate_n" + std::to_string(m->n_moments()));
  nlohmann::json jt = nlohmann::json::array();
  // Sequential so the timings are not skewed by sibling work.
  for (std::size_t ti = 0; ti < spec.times.size(); ++ti) {
    const double t = spec.times[ti];
    const Eigen::ArrayXd f = sample_at_nodes([&](double v) { return bgk_exact_density(spec, t, v); }, rule);
    nlohmann::json entry = {{"t", t}};
    nlohmann::json per_n = nlohmann::json::array();
    std::vector<CaseMetrics> ms;
    for (std::size_t i = 0; i < models.size(); ++i) {
      auto m = evaluate_closure(*models[i], f, rule, grid, detail::case_seed(seed, ti * 16 + i));
      const MomentVector exact = bgk_exact_moments(spec, t, rule, m.n_moments);
      auto j = m.json();
      j["exact_raw_moments"] = to_json(exact.values);
      per_n.push_back(std::move(j));
      auto row = std::vector<std::string>{fmt(t), fmt(m.gp_seconds), fmt(m.newton_seconds),
                                          fmt(m.newton_seconds / m.gp_seconds)};
      const auto tail = case_row_prefix(m);
      row.insert(row.end(), tail.begin(), tail.end());
      summary.add(std::move(row));
      ms.push_back(std::move(m));
    }
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
      std::vector<std::string> row{fmt(t), fmt(grid[k]), fmt(bgk_exact_density(spec, t, grid[k]))};
      for (const auto& m : ms) row.push_back(fmt(m.grid_estimate[k]));
      dens.add(std::move(row));
    }
    entry["results"] = std::move(per_n);
    jt.push_back(std::move(entry));
  }
  rep.data["times"] = std::move(jt);
  rep.tables = {std::move(summary), std::move(dens)};
  return rep;
}

// ---------------------------------------------------------------- BKW

inline double bkw_min_time() { return 6.0 * std::log(2.5); }

inline double bkw_K(double t_hat) {
  const double k = -std::expm1(-t_hat / 6.0);
  // K = 3/5 at the validity threshold itself; allow its rounding.
  if (!(k >= 0.6 - 1e-12 && k <= 1.0)) {
    throw ValidityError("BKW solution needs t_hat >= 6 ln(5/2) (K = " + fmt(k) + " outside [3/5, 1])");
  }
  return k;
}

/// Unnormalized BKW profile; the 3-D prefactor is kept and cancels on normalization.
inline double bkw_profile(double k, double v) {
  const double bracket = std::max(0.0, (5.0 * k - 3.0) + (1.0 - k) / k * v * v);
  return std::exp(-v * v / (2.0 * k)) / (2.0 * k * std::pow(2.0 * std::numbers::pi * k, 1.5)) * bracket;
}

/// The BKW density at t_hat read as a 1-D density on the domain.
class BkwDensity {
 public:
  explicit BkwDensity(double t_hat, const VelocityDomain& domain = {})
      : t_hat_(t_hat), k_(bkw_K(t_hat)) {
    norm_ = integrate([&](double v) { return bkw_profile(k_, v); }, reference_rule(domain));
  }
  double operator()(double v) const { return bkw_profile(k_, v) / norm_; }
  double K() const { return k_; }
  double t_hat() const { return t_hat_; }
  double normalizer() const { return norm_; }

 private:
  double t_hat_, k_;
  double norm_ = 1.0;
};

inline double bkw_density(double t_hat, double v, const VelocityDomain& domain = {}) {
  return BkwDensity(t_hat, domain)(v);
}

/// Closed-form even moment p_{2n} = (4n+1)! / (2^{2n} (2n)!) K^{2n-1} (2n - (2n-1) K).
inline double bkw_closed_form_moment(double k, int two_n) {
  if (two_n < 0 || two_n % 2) throw DomainError("closed-form BKW moments are defined for even orders");
  const int n = two_n / 2;
  double fact_ratio = 1.0;  // (4n+1)! / (2n)!
  for (int i = 2 * n + 1; i <= 4 * n + 1; ++i) fact_ratio *= i;
  const double m2n = std::pow(k, two_n - 1) * (two_n - (two_n - 1) * k);
  return fact_ratio / std::pow(2.0, two_n) * m2n;
}

struct BkwMoments {
  MomentVector closed_form;  // standardized
  MomentVector quadrature;   // standardized
  MomentVector quadrature_raw;
};

/// Closed-form even moments (with their isotropic normalization) and the
/// moments of the 1-D density, both standardized.
inline BkwMoments bkw_moments(double t_hat, int n_moments, const QuadratureRule& rule) {
  const double k = bkw_K(t_hat);
  auto raw_even = [&](int two_n) { return bkw_closed_form_moment(k, two_n); };
  const double p2 = raw_even(2);
  Eigen::VectorXd cf(n_moments);
  for (int j = 1; j <= n_moments; ++j) cf[j - 1] = j % 2 ? 0.0 : raw_even(j) / std::pow(p2, j / 2.0);
  BkwMoments out;
  out.closed_form = MomentVector(cf);
  const BkwDensity f(t_hat, rule.domain());
  out.quadrature_raw = raw_moments_at_nodes(sample_at_nodes(std::cref(f), rule), rule, n_moments);
  out.quadrature = standardize_raw_moments(out.quadrature_raw).standardized;
  return out;
}

struct BKWSpec {
  std::vector<double> times = {5.8, 6.5, 7.5, 8.5};

  void validate() const {
    for (double t : times) bkw_K(t);
  }
};

inline ExperimentReport run_bkw(const std::vector<const GPModel*>& models, const BKWSpec& spec = {},
                                std::uint64_t seed = 0) {
  spec.validate();
  if (models.empty()) throw DomainError("BKW experiment needs at least one model");
  const VelocityDomain domain = models.front()->domain;
  const QuadratureRule rule = reference_rule(domain);
  const Eigen::VectorXd grid = plot_grid(domain);
  ExperimentReport rep;
  rep.name = "bkw";
  rep.data["grid"] = to_json(grid);
  CsvTable summary{"summary", with_case_columns({"t_hat", "K", "p4_closed_form", "p4_quadrature"}), {}};
  CsvTable traces{"moments", {"t_hat", "n_moments", "k", "closed_form", "quadrature", "estimate"}, {}};
  CsvTable dens{"densities", {"t_hat", "v", "exact"}, {}};
  for (const auto* m : models) dens.columns.push_back("estimate_n" + std::to_string(m->n_moments()));
  nlohmann::json jt = nlohmann::json::array();
  for (std::size_t ti = 0; ti < spec.times.size(); ++ti) {
    const double t = spec.times[ti];
    const BkwDensity f(t, domain);
    const Eigen::ArrayXd fs = sample_at_nodes(std::cref(f), rule);
    nlohmann::json entry = {{"t_hat", t}, {"K", f.K()}};
    nlohmann::json per_n = nlohmann::json::array();
    std::vector<CaseMetrics> ms;
    for (std::size_t i = 0; i < models.size(); ++i) {
      const int n = models[i]->n_moments();
      auto m = evaluate_closure(*models[i], fs, rule, grid, detail::case_seed(seed, ti * 16 + i));
      const auto both = bkw_moments(t, n, rule);
      const double p4_cf = n >= 4 ? both.closed_form[4] : std::nan("");
      const double p4_q = n >= 4 ? both.quadrature[4] : std::nan("");
      auto j = m.json();
      j["closed_form_moments"] = to_json(both.closed_form.values);
      j["quadrature_moments"] = to_json(both.quadrature.values);
      j["p4_discrepancy"] = p4_cf - p4_q;
      per_n.push_back(std::move(j));
      auto row = std::vector<std::string>{fmt(t), fmt(f.K()), fmt(p4_cf), fmt(p4_q)};
      const auto tail = case_row_prefix(m);
      row.insert(row.end(), tail.begin(), tail.end());
      summary.add(std::move(row));
      for (int k = 1; k <= n; ++k) {
        traces.add({fmt(t), std::to_string(n), std::to_string(k), fmt(both.closed_form[k]), fmt(both.quadrature[k]),
                    fmt(m.reconstructed_moments[k - 1])});
      }
      ms.push_back(std::move(m));
    }
    for (Eigen::Index k = 0; k < grid.size(); ++k) {
      std::vector<std::string> row{fmt(t), fmt(grid[k]), fmt(f(grid[k]))};
      for (const auto& m : ms) row.push_back(fmt(m.grid_estimate[k]));
      dens.add(std::move(row));
    }
    entry["results"] = std::move(per_n);
    jt.push_back(std::move(entry));
  }
  rep.data["times"] = std::move(jt);
  rep.tables = {std::move(summary), std::move(traces), std::move(dens)};
  return rep;
}

// ---------------------------------------------------------------- realizability

enum class ScanFamily { D, U, S };

inline std::string to_string(ScanFamily f) {
  switch (f) {
    case ScanFamily::D: return "D";
    case ScanFamily::U: return "U";
    case ScanFamily::S: return "S";
  }
  return "?";
}

inline ScanFamily parse_scan_family(const std::string& s) {
  if (s == "D" || s == "d") return ScanFamily::D;
  if (s == "U" || s == "u") return ScanFamily::U;
  if (s == "S" || s == "s") return ScanFamily::S;
  throw DomainError("unknown realizability family '" + s + "' (expected D, U or S)");
}

struct RealizabilityScanSpec {
  ScanFamily family = ScanFamily::D;
  std::vector<double> d = {0.04, 0.02, 0.01};
  double lo = -0.5;  // alpha_min or beta_min
  double hi = 0.5;
  int n_test = 100;

  static RealizabilityScanSpec defaults(ScanFamily f) {
    switch (f) {
      case ScanFamily::D: return {f, {0.04, 0.02, 0.01}, -0.5, 0.5, 100};
      // beta range chosen so the widest S curve (d = 64) ends on p_4 = 4.
      case ScanFamily::U: return {f, {0.1, 0.05, 0.0}, -0.1, 0.1, 200};
      case ScanFamily::S: return {f, {1.0, 8.0, 64.0}, -1.0 / 640.0, 1.0 / 640.0, 100};
    }
    return {};
  }

  void validate() const {
    if (n_test < 1) throw DomainError("realizability scan needs at least one test point");
    if (!(hi > lo)) throw DomainError("realizability scan range must be increasing");
    if (d.empty()) throw DomainError("realizability scan needs at least one offset d");
    if (family == ScanFamily::S) {
      for (double x : d) {
        if (x == 0.0) throw DomainError("S-family offsets must be non-zero");
      }
    }
  }

  /// Test points for offset dv: parameter lo + i h, i = 1..n_test.
  std::vector<MomentVector> points(double dv) const {
    std::vector<MomentVector> out;
    const double h = (hi - lo) / n_test;
    for (int i = 1; i <= n_test; ++i) {
      const double a = lo + i * h;
      switch (family) {
        case ScanFamily::D: out.push_back(MomentVector{0.0, 1.0, a, a * a + 1.0 + dv}); break;
        case ScanFamily::U: out.push_back(MomentVector{0.0, 1.0, a, 4.0 - dv}); break;
        case ScanFamily::S: out.push_back(MomentVector{0.0, 1.0, a / dv, std::pow(10.0 * a * dv, 2) + 3.0}); break;
      }
    }
    return out;
  }
};

struct ScanCell {
  double d = 0.0;
  int model_index = 0;
  int train_size = 0;
  double mean_moment_error = 0.0;
  double mean_variance = 0.0;
  int newton_failures = 0;
  int out_of_box = 0;
};

/// Closure over the scan grid for each N = 4 model. The moment error reference
/// is the Newton solution's moments where Newton converges and the input
/// moments otherwise (failures are counted).
inline ExperimentReport realizability_scan(const std::vector<const GPModel*>& models, const RealizabilityScanSpec& spec,
                                           std::uint64_t seed = 0, int threads = 0) {
  spec.validate();
  for (const auto* m : models) {
    if (m->n_moments() != 4) throw DomainError("realizability scans need N = 4 models");
  }
  ExperimentReport rep;
  rep.name = "realizability_" + to_string(spec.family);
  rep.data["family"] = to_string(spec.family);
  rep.data["range"] = {spec.lo, spec.hi};
  rep.data["n_test"] = spec.n_test;
  CsvTable summary{"summary",
                   {"d", "train_size", "mean_moment_relative_error", "mean_posterior_variance", "newton_failures",
                    "out_of_box"},
                   {}};
  CsvTable points{"points",
                  {"d", "train_size", "p3", "p4", "moment_relative_error", "mean_posterior_variance", "newton_converged",
                   "out_of_box"},
                  {}};
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t di = 0; di < spec.d.size(); ++di) {
    const auto pts = spec.points(spec.d[di]);
    const QuadratureRule rule = build_rule(models.empty() ? VelocityDomain{} : models.front()->domain,
                                           models.empty() ? kDefaultQuadOrder : models.front()->quad_order);
    // Newton references are shared by every model.
    std::vector<std::optional<MomentVector>> refs(pts.size());
    parallel_for(pts.size(), threads, [&](std::size_t k) {
      try {
        const auto sol = newton_solve(pts[k], rule, {}, detail::case_seed(seed, di * 100000 + k));
        refs[k] = moments_of(MaxEntDensity(sol.lambda, rule), 4);
      } catch (const Error&) {
      }
    });
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      const GPModel& model = *models[mi];
      std::vector<double> err(pts.size()), var(pts.size());
      std::vector<char> oob(pts.size());
      parallel_for(pts.size(), threads, [&](std::size_t k) {
        const auto c = close_moments(model, pts[k], rule);
        err[k] = moment_relative_error(c.reconstructed_moments, refs[k] ? *refs[k] : pts[k]);
        var[k] = c.posterior_variance.mean();
        oob[k] = c.out_of_box;
      });
      ScanCell cell;
      cell.d = spec.d[di];
      cell.model_index = static_cast<int>(mi);
      cell.train_size = model.train_size();
      for (std::size_t k = 0; k < pts.size(); ++k) {
        cell.mean_moment_error += err[k] / pts.size();
        cell.mean_variance += var[k] / pts.size();
        cell.newton_failures += !refs[k];
        cell.out_of_box += oob[k];
        points.add({fmt(cell.d), std::to_string(cell.train_size), fmt(pts[k][3]), fmt(pts[k][4]), fmt(err[k]),
                    fmt(var[k]), refs[k] ? "1" : "0", oob[k] ? "1" : "0"});
      }
      summary.add({fmt(cell.d), std::to_string(cell.train_size), fmt(cell.mean_moment_error), fmt(cell.mean_variance),
                   std::to_string(cell.newton_failures), std::to_string(cell.out_of_box)});
      cells.push_back({{"d", cell.d},
                       {"train_size", cell.train_size},
                       {"mean_moment_relative_error", cell.mean_moment_error},
                       {"mean_posterior_variance", cell.mean_variance},
                       {"newton_failures", cell.newton_failures},
                       {"out_of_box", cell.out_of_box}});
    }
  }
  rep.data["cells"] = std::move(cells);
  rep.tables = {std::move(summary), std::move(points)};
  return rep;
}

// ---------------------------------------------------------------- training cache

/// Trained models keyed by (dataset, family, fit options), so experiments that
/// share a model train it once.
class ModelCache {
 public:
  std::shared_ptr<const GPModel> get(const Dataset& ds, KernelFamily family, const FitOptions& opts = {},
                                     int threads = 0) {
    const std::string key = dataset_hash(ds) + "/" + std::to_string(ds.size()) + "/" + to_string(family) + "/" +
                            std::to_string(opts.seed) + "/" + std::to_string(opts.starts) + "/" +
                            std::to_string(opts.max_iters);
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = models_.find(key);
    if (it != models_.end()) return it->second;
    auto model = std::make_shared<const GPModel>(train_model(ds, family, opts, threads));
    models_.emplace(key, model);
    return model;
  }

 private:
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const GPModel>> models_;
};

// ---------------------------------------------------------------- kernel comparison

struct ErrorStats {
  double mean = 0.0;
  double variance = 0.0;
  int count = 0;
};

/// Mean and (population) variance of the multiplier relative error over `test`.
inline ErrorStats lambda_error_stats(const GPModel& model, const Dataset& test, int threads = 0) {
  std::vector<double> err(static_cast<std::size_t>(test.size()));
  parallel_for(err.size(), threads, [&](std::size_t k) {
    const int row = static_cast<int>(k);
    err[k] = lambda_relative_error(LagrangeVector(model.predict_mean(test.p(row))), test.lambda(row));
  });
  ErrorStats s;
  s.count = test.size();
  for (double e : err) s.mean += e / s.count;
  for (double e : err) s.variance += (e - s.mean) * (e - s.mean) / s.count;
  return s;
}

struct KernelCell {
  KernelFamily family;
  int train_size = 0;
  std::optional<ErrorStats> stats;
  std::string error;
  double train_seconds = 0.0;
};

inline ExperimentReport kernel_comparison(const Dataset& train, const Dataset& test,
                                          const std::vector<KernelFamily>& families, const std::vector<int>& sizes,
                                          const FitOptions& opts = {}, int threads = 0, ModelCache* cache = nullptr) {
  if (train.n_moments() != test.n_moments()) throw DomainError("train and test sets differ in N");
  ModelCache local;
  ModelCache& models = cache ? *cache : local;
  ExperimentReport rep;
  rep.name = "kernels";
  rep.data["n_moments"] = train.n_moments();
  rep.data["test_size"] = test.size();
  rep.data["seed"] = opts.seed;
  CsvTable table{"summary", {"family", "train_size", "mean_relative_error", "variance_relative_error", "train_seconds", "error"}, {}};
  nlohmann::json cells = nlohmann::json::array();
  for (auto family : families) {
    for (int m : sizes) {
      if (m > train.size()) throw DomainError("training size " + std::to_string(m) + " exceeds the dataset");
      KernelCell cell{family, m, std::nullopt, {}, 0.0};
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const auto model = models.get(train.head(m), family, opts, threads);
        cell.train_seconds = detail::seconds_since(t0);
        cell.stats = lambda_error_stats(*model, test, threads);
      } catch (const Error& e) {
        cell.error = e.what();
      }
      nlohmann::json j = {{"family", to_string(family)}, {"train_size", m}, {"train_seconds", cell.train_seconds}};
      if (cell.stats) {
        j["mean_relative_error"] = cell.stats->mean;
        j["variance_relative_error"] = cell.stats->variance;
      } else {
        j["error"] = cell.error;
      }
      cells.push_back(j);
      table.add({to_string(family), std::to_string(m), cell.stats ? fmt(cell.stats->mean) : "nan",
                 cell.stats ? fmt(cell.stats->variance) : "nan", fmt(cell.train_seconds), cell.error});
    }
  }
  rep.data["cells"] = std::move(cells);
  rep.tables = {std::move(table)};
  return rep;
}

// ---------------------------------------------------------------- benchmark

struct BenchmarkResult {
  int n_moments = 0;
  int train_size = 0;
  int moments_used = 0;
  int moments_dropped = 0;  // not Newton-solvable
  double median_gp_seconds = 0.0;
  double median_newton_seconds = 0.0;
  double ratio = 0.0;
  std::vector<double> gp_seconds, newton_seconds;  // per repeat, whole batch

  nlohmann::json json() const {
    return {{"n_moments", n_moments},
            {"train_size", train_size},
            {"moments_used", moments_used},
            {"moments_dropped", moments_dropped},
            {"median_gp_seconds", median_gp_seconds},
            {"median_newton_seconds", median_newton_seconds},
            {"ratio", ratio},
            {"gp_seconds", gp_seconds},
            {"newton_seconds", newton_seconds}};
  }
};

/// Median batch wall-clock over repeats: GP posterior mean vs Newton, both
/// from standardized moments to multipliers. Moments Newton cannot solve are
/// dropped first.
inline BenchmarkResult benchmark_speedup(const GPModel& model, const std::vector<MomentVector>& test_moments,
                                         int repeats, const SolverOptions& newton = {}, std::uint64_t seed = 0) {
  if (repeats < 1) throw DomainError("benchmark needs at least one repeat");
  const QuadratureRule rule = build_rule(model.domain, model.quad_order);
  std::vector<MomentVector> usable;
  std::vector<std::uint64_t> seeds;  // the seed that solved each usable vector
  for (std::size_t k = 0; k < test_moments.size(); ++k) {
    try {
      newton_solve(test_moments[k], rule, newton, detail::case_seed(seed, k));
      usable.push_back(test_moments[k]);
      seeds.push_back(detail::case_seed(seed, k));
    } catch (const Error&) {
    }
  }
  if (usable.empty()) throw DomainError("no benchmark moment vector is Newton-solvable");
  BenchmarkResult r;
  r.n_moments = model.n_moments();
  r.train_size = model.train_size();
  r.moments_used = static_cast<int>(usable.size());
  r.moments_dropped = static_cast<int>(test_moments.size() - usable.size());
  double sink = 0.0;
  for (int rep = 0; rep < repeats; ++rep) {
    auto t0 = std::chrono::steady_clock::now();
    for (const auto& p : usable) sink += model.predict_mean(p)[0];
    r.gp_seconds.push_back(detail::seconds_since(t0));
    t0 = std::chrono::steady_clock::now();
    for (std::size_t k = 0; k < usable.size(); ++k) {
      sink += newton_solve(usable[k], rule, newton, seeds[k]).lambda.values[0];
    }
    r.newton_seconds.push_back(detail::seconds_since(t0));
  }
  if (!std::isfinite(sink)) throw DomainError("benchmark produced non-finite multipliers");
  r.median_gp_seconds = detail::median(r.gp_seconds);
  r.median_newton_seconds = detail::median(r.newton_seconds);
  r.ratio = r.median_newton_seconds / r.median_gp_seconds;
  return r;
}

inline ExperimentReport benchmark_report(const std::vector<BenchmarkResult>& results) {
  ExperimentReport rep;
  rep.name = "benchmark";
  CsvTable table{"summary",
                 {"n_moments", "train_size", "moments_used", "median_gp_seconds", "median_newton_seconds", "ratio"},
                 {}};
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : results) {
    runs.push_back(r.json());
    table.add({std::to_string(r.n_moments), std::to_string(r.train_size), std::to_string(r.moments_used),
               fmt(r.median_gp_seconds), fmt(r.median_newton_seconds), fmt(r.ratio)});
  }
  rep.data["runs"] = std::move(runs);
  rep.tables = {std::move(table)};
  return rep;
}

}  // namespace maxent
