#pragma once

// Command-line front end. run() parses argv, executes one subcommand and
// returns the exit code: 0 success, 1 domain error, 2 usage error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "maxent/closure.hpp"
#include "maxent/datagen.hpp"
#include "maxent/experiments.hpp"
#include "maxent/gp.hpp"
#include "maxent/io.hpp"
#include "maxent/med.hpp"

namespace maxent::cli {

/// Settings shared across subcommands; a --config JSON file may set any of
/// these keys, and explicit flags override it.
struct RunConfig {
  int n_moments = 4;
  double v_min = -10.0;
  double v_max = 10.0;
  int quad_order = kDefaultQuadOrder;
  double b = 10.0;
  std::vector<double> omega_p;  // flat lo, hi pairs; empty = default box
  std::string kernel = "rbf";
  std::string dataset;
  std::vector<std::string> models;
  std::string seed;  // integer or "auto"; empty = not given
  int threads = 0;   // 0 = MAXENT_THREADS, then all cores
};

inline const std::set<std::string> kConfigKeys = {"n_moments", "v_min",   "v_max", "quad_order", "b",      "omega_p",
                                                  "kernel",    "dataset", "model", "seed",       "threads"};

struct Seed {
  std::uint64_t value = 0;
  bool automatic = false;

  nlohmann::json json() const { return {{"seed", value}, {"seed_auto", automatic}}; }
};

/// "auto" draws a seed from std::random_device; stochastic commands refuse an empty value.
inline Seed resolve_seed(const std::string& text, bool required, const std::string& command) {
  if (text.empty()) {
    if (required) throw UsageError(command + " is stochastic: pass --seed <int> or --seed auto");
    return {};
  }
  if (text == "auto") {
    std::random_device rd;
    return {(static_cast<std::uint64_t>(rd()) << 32) | rd(), true};
  }
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError("--seed must be a non-negative integer or 'auto', got '" + text + "'");
  }
  return {v, false};
}

/// Comma-separated numbers.
inline std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  try {
    for (auto part : io::split(text, ',')) out.push_back(io::parse_double(part));
  } catch (const ParseError& e) {
    throw UsageError(flag + ": " + e.what());
  }
  if (out.empty()) throw UsageError(flag + " needs at least one value");
  return out;
}

inline nlohmann::json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline void emit(std::ostream& out, const nlohmann::json& j) { out << j.dump(2) << "\n"; }

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

  int run(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e, out_, err_);
      return code == 0 ? 0 : 2;
    }
    try {
      apply_config();
      action_();
      return 0;
    } catch (const UsageError& e) {
      err_ << "maxent: usage error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      err_ << "maxent: error: " << e.what() << "\n";
      return 1;
    }
  }

 private:
  struct Binding {
    CLI::App* sub;
    CLI::Option* opt;
    std::string key;
    std::function<void(const nlohmann::json&)> set;
  };

  template <typename T>
  CLI::Option* bind(CLI::App* sub, const std::string& name, T& var, const std::string& desc, const std::string& key) {
    auto* o = sub->add_option(name, var, desc);
    bindings_.push_back({sub, o, key, [&var](const nlohmann::json& j) { var = j.get<T>(); }});
    return o;
  }

  CLI::App* leaf(CLI::App* parent, const std::string& name, const std::string& desc) {
    auto* sub = parent->add_subcommand(name, desc);
    sub->add_option("--config", config_path_, "JSON file with defaults for this run (flags take precedence)");
    sub->add_option("--threads", cfg_.threads, "worker threads; 0 uses MAXENT_THREADS or all cores");
    bindings_.push_back({sub, sub->get_option("--threads"), "threads",
                         [this](const nlohmann::json& j) { cfg_.threads = j.get<int>(); }});
    return sub;
  }

  void seed_option(CLI::App* sub, bool required) {
    bind(sub, "--seed", cfg_.seed,
         required ? "RNG seed (integer or 'auto'); required" : "seed of the Newton initial guesses (integer or 'auto')",
         "seed");
    if (!required) sub->get_option("--seed")->default_str("0");
  }

  void domain_options(CLI::App* sub) {
    bind(sub, "--v-min", cfg_.v_min, "lower velocity bound", "v_min");
    bind(sub, "--v-max", cfg_.v_max, "upper velocity bound", "v_max");
    bind(sub, "--quad-order", cfg_.quad_order, "Gauss-Legendre order", "quad_order");
  }

  CLI::Option* models_option(CLI::App* sub, const std::string& desc) {
    auto* o = sub->add_option("--model", cfg_.models, desc);
    bindings_.push_back({sub, o, "model", [this](const nlohmann::json& j) {
                           cfg_.models = j.is_array() ? j.get<std::vector<std::string>>()
                                                      : std::vector<std::string>{j.get<std::string>()};
                         }});
    return o;
  }

  void build() {
    app_.description("Maximum-entropy moment closure with a Gaussian-process surrogate");
    app_.option_defaults()->always_capture_default();
    app_.require_subcommand(1);
    app_.failure_message(CLI::FailureMessage::help);

    // gen-data
    auto* gen = leaf(&app_, "gen-data", "sample (moments, multipliers) training pairs");
    bind(gen, "--n", cfg_.n_moments, "number of moments N", "n_moments");
    gen->add_option("--count", count_, "number of pairs M")->required();
    bind(gen, "--out", cfg_.dataset, "output CSV path (a .meta.json sidecar is written next to it)", "dataset");
    bind(gen, "--b", cfg_.b, "half-width of the multiplier sampling box", "b");
    bind(gen, "--omega-p", cfg_.omega_p, "moment box override: lo hi pairs for p_1..p_N", "omega_p")
        ->expected(2, 16)
        ->allow_extra_args(false);
    gen->add_option("--epsilon", epsilon_, "tolerance on the standardized p_1 and p_2");
    domain_options(gen);
    seed_option(gen, true);
    gen->callback([this] { action_ = [this] { gen_data(); }; });

    // train
    auto* train = leaf(&app_, "train", "fit one GP per multiplier to a dataset");
    bind(train, "--data", cfg_.dataset, "training dataset CSV", "dataset");
    bind(train, "--kernel", cfg_.kernel, "rbf, matern12, matern32 or matern52", "kernel");
    train->add_option("--out", out_path_, "output model JSON path");
    train->add_option("--starts", fit_.starts, "optimizer restarts");
    train->add_option("--max-iters", fit_.max_iters, "BFGS iterations per start");
    seed_option(train, true);
    train->callback([this] { action_ = [this] { train_cmd(); }; });

    // predict
    auto* predict = leaf(&app_, "predict", "close a raw moment vector with a trained model");
    models_option(predict, "model JSON path");
    predict->add_option("--moments", moments_, "comma-separated raw moments p_1..p_N")->required();
    predict->callback([this] { action_ = [this] { predict_cmd(); }; });

    // solve
    auto* solve = leaf(&app_, "solve", "solve the maximum-entropy problem directly (Newton on the dual)");
    solve->add_option("--moments", moments_, "comma-separated moments p_1..p_N")->required();
    solve->add_option("--n", n_check_, "expected number of moments (checked against --moments)");
    domain_options(solve);
    solve->add_option("--tol", solver_.tol, "stop when |gradient|_inf <= tol");
    solve->add_option("--max-iters", solver_.max_iters, "Newton iteration cap");
    seed_option(solve, false);
    solve->callback([this] { action_ = [this] { solve_cmd(); }; });

    // experiment
    auto* exp = app_.add_subcommand("experiment", "run an experiment and write its report");
    exp->require_subcommand(1);
    auto report_options = [this](CLI::App* sub) {
      sub->add_option("--out-dir", out_dir_, "directory for the JSON and CSV report files");
    };

    auto* bi = leaf(exp, "bimodal", "closure of two-Gaussian mixtures");
    models_option(bi, "model JSON path (repeat for several N)")->required();
    bi->add_option("--case", cases_, "mixture mu1,sigma1 (repeatable); default: the three standard cases");
    report_options(bi);
    seed_option(bi, false);
    bi->callback([this] { action_ = [this] { bimodal_cmd(false); }; });

    auto* noisy = leaf(exp, "noisy", "bi-modal closure with multiplicative per-node noise");
    models_option(noisy, "model JSON path (repeat for several N)")->required();
    noisy->add_option("--case", cases_, "mixture mu1,sigma1 (repeatable); default: the three standard cases");
    noisy->add_option("--noise-sigma", noise_sigma_, "standard deviation of the relative noise");
    report_options(noisy);
    seed_option(noisy, true);
    noisy->callback([this] { action_ = [this] { bimodal_cmd(true); }; });

    auto* bgk = leaf(exp, "bgk", "BGK relaxation of a bi-modal initial state");
    models_option(bgk, "model JSON path (repeat for several N)")->required();
    bgk->add_option("--nu", bgk_.nu, "collision frequency");
    bgk->add_option("--times", times_, "comma-separated output times")->default_str("0,3,8,20");
    bgk->add_option("--initial", initial_, "initial mixture mu1,sigma1")->default_str("0.98,0.2");
    report_options(bgk);
    seed_option(bgk, false);
    bgk->callback([this] { action_ = [this] { bgk_cmd(); }; });

    auto* bkw = leaf(exp, "bkw", "closure of the BKW exact solution");
    models_option(bkw, "model JSON path (repeat for several N)")->required();
    bkw->add_option("--times", times_, "comma-separated scaled times t_hat")->default_str("5.8,6.5,7.5,8.5");
    report_options(bkw);
    seed_option(bkw, false);
    bkw->callback([this] { action_ = [this] { bkw_cmd(); }; });

    auto* real = leaf(exp, "realizability", "closure error near the realizability boundary (N = 4)");
    models_option(real, "N = 4 model JSON path (repeat for several M)")->required();
    real->add_option("--family", family_, "scan family D, U or S");
    real->add_option("--d", d_list_, "comma-separated offsets; default per family (D: 0.04,0.02,0.01)");
    real->add_option("--range", range_, "scan parameter lo,hi; default per family (D: -0.5,0.5)");
    real->add_option("--n-test", n_test_, "test points per offset; default per family (D: 100)");
    report_options(real);
    seed_option(real, false);
    real->callback([this] { action_ = [this] { realizability_cmd(); }; });

    auto* kern = leaf(exp, "kernels", "held-out multiplier error per kernel family and training size");
    bind(kern, "--train", cfg_.dataset, "training dataset CSV", "dataset");
    kern->add_option("--test", test_path_, "held-out dataset CSV")->required();
    kern->add_option("--kernels", kernels_, "comma-separated kernel families");
    kern->add_option("--sizes", sizes_, "comma-separated training sizes M");
    kern->add_option("--starts", fit_.starts, "optimizer restarts");
    kern->add_option("--max-iters", fit_.max_iters, "BFGS iterations per start");
    report_options(kern);
    seed_option(kern, true);
    kern->callback([this] { action_ = [this] { kernels_cmd(); }; });

    // benchmark
    auto* bench = leaf(&app_, "benchmark", "GP versus Newton wall-clock time");
    models_option(bench, "model JSON path (repeat for several N)")->required();
    bench->add_option("--data", bench_data_, "test dataset CSV per model (one path is shared)")->required();
    bench->add_option("--count", bench_count_, "test moment vectors per model");
    bench->add_option("--repeats", repeats_, "timed repeats; medians are reported");
    bench->add_option("--out-dir", out_dir_, "also write the report files here");
    seed_option(bench, false);
    bench->callback([this] { action_ = [this] { benchmark_cmd(); }; });
  }

  void apply_config() {
    if (config_path_.empty()) return;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(config_path_));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("config '" + config_path_ + "' is not valid JSON: " + e.what());
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    if (!j.is_object()) throw UsageError("config '" + config_path_ + "' must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!kConfigKeys.count(key)) throw UsageError("config '" + config_path_ + "': unknown key '" + key + "'");
    }
    if (j.contains("seed") && j["seed"].is_number_unsigned()) j["seed"] = std::to_string(j["seed"].get<std::uint64_t>());
    if (j.contains("omega_p") && j["omega_p"].is_array() && !j["omega_p"].empty() && j["omega_p"][0].is_array()) {
      nlohmann::json flat = nlohmann::json::array();
      for (const auto& iv : j["omega_p"]) {
        for (const auto& x : iv) flat.push_back(x);
      }
      j["omega_p"] = flat;
    }
    for (const auto& b : bindings_) {
      if (!b.sub->parsed() || b.opt->count() > 0 || !j.contains(b.key)) continue;
      try {
        b.set(j[b.key]);
      } catch (const nlohmann::json::exception& e) {
        throw UsageError("config key '" + b.key + "': " + e.what());
      }
    }
  }

  QuadratureRule rule() const {
    VelocityDomain d{cfg_.v_min, cfg_.v_max};
    d.validate();
    return build_rule(d, cfg_.quad_order);
  }

  std::vector<GPModel> load_models() const {
    if (cfg_.models.empty()) throw UsageError("--model is required");
    std::vector<GPModel> models;
    for (const auto& p : cfg_.models) models.push_back(load_model(p));
    return models;
  }

  static std::vector<const GPModel*> pointers(const std::vector<GPModel>& models) {
    std::vector<const GPModel*> out;
    for (const auto& m : models) out.push_back(&m);
    return out;
  }

  void write_and_report(ExperimentReport rep, const Seed& seed) {
    rep.data["seed"] = seed.value;
    rep.data["seed_auto"] = seed.automatic;
    rep.data["models"] = cfg_.models;
    std::vector<std::string> files;
    for (const auto& f : write_report(rep, out_dir_)) files.push_back(f.string());
    emit(out_, {{"experiment", rep.name}, {"files", files}, {"seed", seed.value}, {"seed_auto", seed.automatic}});
  }

  void gen_data() {
    const Seed seed = resolve_seed(cfg_.seed, true, "gen-data");
    if (cfg_.dataset.empty()) throw UsageError("gen-data needs --out");
    SamplingSpec spec = SamplingSpec::for_moments(cfg_.n_moments, cfg_.b, epsilon_);
    if (!cfg_.omega_p.empty()) {
      if (static_cast<int>(cfg_.omega_p.size()) != 2 * cfg_.n_moments) {
        throw UsageError("--omega-p needs " + std::to_string(2 * cfg_.n_moments) + " values (lo hi per moment), got " +
                         std::to_string(cfg_.omega_p.size()));
      }
      spec.omega_p.clear();
      for (int i = 0; i < cfg_.n_moments; ++i) spec.omega_p.push_back({cfg_.omega_p[2 * i], cfg_.omega_p[2 * i + 1]});
    }
    const Dataset ds = generate_dataset(count_, spec, rule(), seed.value, cfg_.threads);
    save_dataset(ds, cfg_.dataset);
    nlohmann::json j = {{"dataset", cfg_.dataset},
                        {"meta", dataset_meta_path(cfg_.dataset).string()},
                        {"count", ds.size()},
                        {"n_moments", ds.n_moments()},
                        {"acceptance_rate", ds.stats.acceptance_rate()},
                        {"generation_seconds", ds.meta.generation_seconds}};
    j.update(seed.json());
    emit(out_, j);
  }

  void train_cmd() {
    const Seed seed = resolve_seed(cfg_.seed, true, "train");
    if (cfg_.dataset.empty()) throw UsageError("train needs --data");
    if (out_path_.empty()) {
      if (cfg_.models.size() != 1) throw UsageError("train needs --out");
      out_path_ = cfg_.models.front();
    }
    const Dataset ds = load_dataset(cfg_.dataset);
    FitOptions opts = fit_;
    opts.seed = seed.value;
    const auto t0 = std::chrono::steady_clock::now();
    const GPModel model = train_model(ds, parse_kernel_family(cfg_.kernel), opts, cfg_.threads);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json mj = model_to_json(model);
    mj.update(seed.json());
    io::write_file_atomic(out_path_, mj.dump() + "\n");
    std::vector<double> lml;
    for (const auto& o : model.outputs()) lml.push_back(o.log_likelihood);
    nlohmann::json j = {{"model", out_path_},
                        {"family", to_string(model.family())},
                        {"n_moments", model.n_moments()},
                        {"train_size", model.train_size()},
                        {"log_likelihood", lml},
                        {"train_seconds", seconds}};
    j.update(seed.json());
    emit(out_, j);
  }

  void predict_cmd() {
    if (cfg_.models.size() != 1) throw UsageError("predict needs exactly one --model");
    const GPModel model = load_model(cfg_.models.front());
    const auto raw = parse_list(moments_, "--moments");
    if (static_cast<int>(raw.size()) != model.n_moments()) {
      throw UsageError("--moments has " + std::to_string(raw.size()) + " values, the model expects N = " +
                       std::to_string(model.n_moments()));
    }
    const MomentVector p(Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size())));
    const ClosureResult c = close_moments(model, p);
    if (c.out_of_box) err_ << "maxent: warning: " << c.warning << "\n";
    emit(out_, {{"lambda", vec_json(c.lambda_hat.values)},
                {"variance", vec_json(c.posterior_variance)},
                {"reconstructed_moments", vec_json(c.reconstructed_moments.values)},
                {"standardized_moments", vec_json(c.standardized_input.values)},
                {"mu", c.mu},
                {"sigma", c.sigma},
                {"out_of_box", c.out_of_box},
                {"warning", c.warning}});
  }

  void solve_cmd() {
    const Seed seed = resolve_seed(cfg_.seed, false, "solve");
    const auto raw = parse_list(moments_, "--moments");
    if (n_check_ && *n_check_ != static_cast<int>(raw.size())) {
      throw UsageError("--moments has " + std::to_string(raw.size()) + " values, --n expects N = " +
                       std::to_string(*n_check_));
    }
    const MomentVector p(Eigen::Map<const Eigen::VectorXd>(raw.data(), static_cast<Eigen::Index>(raw.size())));
    const QuadratureRule r = rule();
    const auto t0 = std::chrono::steady_clock::now();
    const NewtonResult res = newton_solve(p, r, solver_, seed.value);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const MaxEntDensity d(res.lambda, r);
    nlohmann::json j = {{"lambda", vec_json(res.lambda.values)},
                        {"iterations", res.iterations},
                        {"gradient_norm", res.gradient_norm},
                        {"log_z", d.log_z()},
                        {"objective_trace", res.objective_trace},
                        {"seconds", seconds}};
    j.update(seed.json());
    emit(out_, j);
  }

  std::vector<BiModalParams> parse_cases() const {
    if (cases_.empty()) return default_bimodal_cases();
    std::vector<BiModalParams> out;
    for (const auto& c : cases_) {
      const auto v = parse_list(c, "--case");
      if (v.size() != 2) throw UsageError("--case needs mu1,sigma1, got '" + c + "'");
      out.push_back({v[0], v[1]});
    }
    return out;
  }

  void bimodal_cmd(bool noisy) {
    const Seed seed = resolve_seed(cfg_.seed, noisy, noisy ? "experiment noisy" : "experiment bimodal");
    const auto cases = parse_cases();
    const auto models = load_models();
    auto rep = noisy ? run_noisy_bimodal(pointers(models), cases, noise_sigma_, seed.value, cfg_.threads)
                     : run_bimodal(pointers(models), cases, seed.value, cfg_.threads);
    write_and_report(std::move(rep), seed);
  }

  void bgk_cmd() {
    const Seed seed = resolve_seed(cfg_.seed, false, "experiment bgk");
    BGKSpec spec = bgk_;
    if (!times_.empty()) spec.times = parse_list(times_, "--times");
    if (!initial_.empty()) {
      const auto v = parse_list(initial_, "--initial");
      if (v.size() != 2) throw UsageError("--initial needs mu1,sigma1");
      spec.initial = {v[0], v[1]};
    }
    const auto models = load_models();
    write_and_report(run_bgk(pointers(models), spec, seed.value), seed);
  }

  void bkw_cmd() {
    const Seed seed = resolve_seed(cfg_.seed, false, "experiment bkw");
    BKWSpec spec;
    if (!times_.empty()) spec.times = parse_list(times_, "--times");
    const auto models = load_models();
    write_and_report(run_bkw(pointers(models), spec, seed.value), seed);
  }

  void realizability_cmd() {
    const Seed seed = resolve_seed(cfg_.seed, false, "experiment realizability");
    RealizabilityScanSpec spec;
    try {
      spec = RealizabilityScanSpec::defaults(parse_scan_family(family_));
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
    if (!d_list_.empty()) spec.d = parse_list(d_list_, "--d");
    if (!range_.empty()) {
      const auto v = parse_list(range_, "--range");
      if (v.size() != 2) throw UsageError("--range needs lo,hi");
      spec.lo = v[0];
      spec.hi = v[1];
    }
    if (n_test_ > 0) spec.n_test = n_test_;
    const auto models = load_models();
    write_and_report(realizability_scan(pointers(models), spec, seed.value, cfg_.threads), seed);
  }

  void kernels_cmd() {
    const Seed seed = resolve_seed(cfg_.seed, true, "experiment kernels");
    if (cfg_.dataset.empty()) throw UsageError("experiment kernels needs --train");
    std::vector<KernelFamily> families;
    for (auto name : io::split(kernels_, ',')) {
      try {
        families.push_back(parse_kernel_family(std::string(name)));
      } catch (const DomainError& e) {
        throw UsageError(e.what());
      }
    }
    std::vector<int> sizes;
    for (double s : parse_list(sizes_, "--sizes")) {
      if (s < 1 || s != std::floor(s)) throw UsageError("--sizes must hold positive integers");
      sizes.push_back(static_cast<int>(s));
    }
    const Dataset train = load_dataset(cfg_.dataset);
    const Dataset test = load_dataset(test_path_);
    FitOptions opts = fit_;
    opts.seed = seed.value;
    cfg_.models.clear();
    write_and_report(kernel_comparison(train, test, families, sizes, opts, cfg_.threads), seed);
  }

  void benchmark_cmd() {
    const Seed seed = resolve_seed(cfg_.seed, false, "benchmark");
    const auto models = load_models();
    if (bench_data_.size() != 1 && bench_data_.size() != models.size()) {
      throw UsageError("--data takes one path, or one per --model");
    }
    std::vector<BenchmarkResult> results;
    for (std::size_t i = 0; i < models.size(); ++i) {
      const Dataset test = load_dataset(bench_data_.size() == 1 ? bench_data_[0] : bench_data_[i]);
      if (test.n_moments() != models[i].n_moments()) {
        throw UsageError("test set " + std::to_string(i + 1) + " has N = " + std::to_string(test.n_moments()) +
                         ", its model expects N = " + std::to_string(models[i].n_moments()));
      }
      std::vector<MomentVector> ps;
      for (int k = 0; k < std::min(bench_count_, test.size()); ++k) ps.push_back(test.p(k));
      results.push_back(benchmark_speedup(models[i], ps, repeats_, {}, seed.value));
    }
    auto rep = benchmark_report(results);
    if (!out_dir_.empty() && out_dir_ != ".") {
      write_and_report(std::move(rep), seed);
      return;
    }
    nlohmann::json j = rep.data;
    j.update(seed.json());
    emit(out_, j);
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"maxent"};
  std::vector<Binding> bindings_;
  std::function<void()> action_;

  RunConfig cfg_;
  std::string config_path_;
  int count_ = 0;
  double epsilon_ = 1e-10;
  std::string out_path_;
  FitOptions fit_;
  std::string moments_;
  std::optional<int> n_check_;
  SolverOptions solver_;
  std::string out_dir_ = ".";
  std::vector<std::string> cases_;
  double noise_sigma_ = 0.1;
  BGKSpec bgk_;
  std::string times_;
  std::string initial_;
  std::string family_ = "D";
  std::string d_list_;
  std::string range_;
  int n_test_ = 0;
  std::string test_path_;
  std::string kernels_ = "rbf,matern12";
  std::string sizes_ = "100,1000";
  std::vector<std::string> bench_data_;
  int bench_count_ = 200;
  int repeats_ = 5;
};

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Cli cli(out, err);
  return cli.run(argc, argv);
}

}  // namespace maxent::cli
