#pragma once
// Command-line surface: `train`, `estimate-ratio`, and `estimate-divergence`
// subcommands, CSV/JSON emission, and the manifest round-trip.
//
// Exit codes: 0 ok, 2 usage error, 3 stability halt.

#include "rf/data.hpp"
#include "rf/fgen.hpp"
#include "rf/gan.hpp"
#include "rf/net.hpp"
#include "rf/ratio.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace rf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitHalt = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RATIO_FORGE_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
      throw UsageError("RATIO_FORGE_SEED is not an unsigned integer: " + std::string(env));
    return v;
  }
  return 0;
}

// FNV-1a over the resolved configuration: a stable, git-style run id.
inline std::string run_id(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
}

inline void write_log_csv(const fs::path& path, const std::vector<TrainLogRecord>& log) {
  std::string text = "step,mean_r_real,mean_r_fake,dstep_loss,gstep_loss,div_delta,flag\n";
  for (const auto& rec : log) {
    text += std::to_string(rec.step);
    for (double v : {rec.mean_r_real, rec.mean_r_fake, rec.dstep_loss, rec.gstep_loss,
                     rec.div_delta})
      text += ',' + fmt17(v);
    text += ',' + rec.flag + '\n';
  }
  write_text(path, text);
}

// Points either sampled from an analytic spec or read from a headerless CSV.
struct PointSource {
  std::optional<DistSpec> spec;  // set when the argument parsed as a spec
  Batch points;                  // set when the argument was a CSV path
  std::string text;

  bool analytic() const { return spec.has_value(); }

  Batch draw(int n, std::mt19937_64& rng) const {
    return analytic() ? sample(*spec, n, rng) : points;
  }
};

inline PointSource resolve_source(const std::string& arg, int default_samples,
                                  std::mt19937_64& rng) {
  PointSource src;
  src.text = arg;
  try {
    src.spec = DistSpec::parse(arg);
    return src;
  } catch (const std::invalid_argument&) {
    // fall through to CSV
  }
  if (!fs::exists(arg)) throw UsageError("neither a dataset spec nor a file: " + arg);
  src.points = read_points_csv(arg);
  if (src.points.rows() == 0) throw UsageError("empty point set: " + arg);
  (void)default_samples;
  (void)rng;
  return src;
}

}  // namespace detail

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string divergence = "pearson";
  std::string gstep = "f";
  std::string dataset;
  std::int64_t steps = 40000;
  int batch = 64;
  double lr = 5e-5;
  double ratio_scale = 2.0;
  double relative_alpha = 0.0;
  std::optional<std::uint64_t> seed;
  std::string out;
  int log_every = 100;
  int snapshot_every = 0;  // 0 = final snapshot only
  std::string manifest;    // reload a previous run's configuration
};

namespace detail {

inline json train_config_json(const TrainArgs& a, std::uint64_t seed) {
  return json{{"divergence", a.divergence},
              {"gstep", a.gstep},
              {"dataset", a.dataset},
              {"steps", a.steps},
              {"batch", a.batch},
              {"lr", a.lr},
              {"ratio_scale", a.ratio_scale},
              {"relative_alpha", a.relative_alpha},
              {"seed", seed},
              {"log_every", a.log_every},
              {"snapshot_every", a.snapshot_every}};
}

inline TrainArgs train_args_from_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read manifest: " + path.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw UsageError("bad manifest JSON: " + std::string(e.what()));
  }
  if (!m.contains("config")) throw UsageError("manifest has no config object");
  const json& c = m["config"];
  TrainArgs a;
  try {
    a.divergence = c.at("divergence").get<std::string>();
    a.gstep = c.at("gstep").get<std::string>();
    a.dataset = c.at("dataset").get<std::string>();
    a.steps = c.at("steps").get<std::int64_t>();
    a.batch = c.at("batch").get<int>();
    a.lr = c.at("lr").get<double>();
    a.ratio_scale = c.at("ratio_scale").get<double>();
    a.relative_alpha = c.at("relative_alpha").get<double>();
    a.seed = c.at("seed").get<std::uint64_t>();
    a.log_every = c.at("log_every").get<int>();
    a.snapshot_every = c.value("snapshot_every", 0);
  } catch (const json::exception& e) {
    throw UsageError("manifest config incomplete: " + std::string(e.what()));
  }
  return a;
}

}  // namespace detail

inline int cmd_train(TrainArgs args) {
  if (!args.manifest.empty()) {
    TrainArgs loaded = detail::train_args_from_manifest(args.manifest);
    loaded.out = args.out;
    loaded.manifest.clear();
    args = std::move(loaded);
  }
  if (args.dataset.empty()) throw UsageError("--dataset is required");
  if (args.out.empty()) throw UsageError("--out is required");

  TrainConfig cfg;
  try {
    cfg.gen = FGen::parse(args.divergence);
    cfg.variant = parse_gstep_variant(args.gstep);
    cfg.dataset = DistSpec::parse(args.dataset);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (args.steps < 0 || args.batch < 1 || !(args.lr > 0.0) || args.log_every < 1 ||
      !(args.ratio_scale > 0.0) || args.relative_alpha < 0.0 || args.relative_alpha >= 1.0 ||
      args.snapshot_every < 0)
    throw UsageError("invalid training parameters");
  cfg.steps = args.steps;
  cfg.batch = args.batch;
  cfg.lr = args.lr;
  cfg.scale = args.ratio_scale;
  cfg.relative_alpha = args.relative_alpha;
  cfg.seed = detail::resolve_seed(args.seed);
  cfg.log_every = args.log_every;

  const fs::path dir(args.out);
  fs::create_directories(dir);

  // Snapshots use their own stream so they can never perturb training draws.
  auto snapshot = [&](std::int64_t step, const GeneratorModel& g) {
    std::mt19937_64 srng(cfg.seed ^ (0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(step)));
    const Batch pts = generator_forward(g, sample_noise(5000, g.noise_dim, srng));
    write_points_csv((dir / ("samples_" + std::to_string(step) + ".csv")).string(), pts);
  };

  const std::string started = detail::utc_now();
  const auto t0 = std::chrono::steady_clock::now();

  TrainHooks hooks;
  std::vector<std::string> snapshot_files;
  if (args.snapshot_every > 0) {
    hooks.on_log = [&](const TrainLogRecord& rec, const GeneratorModel& g, const RatioModel&) {
      if (rec.flag.empty() && rec.step % args.snapshot_every == 0) {
        snapshot(rec.step, g);
        snapshot_files.push_back("samples_" + std::to_string(rec.step) + ".csv");
      }
    };
  }
  const TrainResult res = train(cfg, &hooks);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  detail::write_log_csv(dir / "log.csv", res.log);
  const std::int64_t snap_step = res.steps_completed;
  const std::string snap_name = "samples_" + std::to_string(snap_step) + ".csv";
  if (snapshot_files.empty() || snapshot_files.back() != snap_name) {
    snapshot(snap_step, res.generator);
    snapshot_files.push_back(snap_name);
  }

  json manifest;
  manifest["command"] = "train";
  manifest["config"] = detail::train_config_json(args, cfg.seed);
  manifest["run_id"] = detail::run_id(manifest["config"].dump());
  manifest["artifacts"] =
      json{{"log", "log.csv"}, {"manifest", "manifest.json"}, {"samples", snapshot_files}};
  manifest["wall_clock"] = json{
      {"started_utc", started}, {"finished_utc", detail::utc_now()}, {"elapsed_seconds", elapsed}};
  manifest["result"] = json{{"halted", res.halted},
                            {"flag", res.halt_flag},
                            {"steps_completed", res.steps_completed}};
  detail::write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  if (res.halted) {
    std::cerr << "training halted at step " << res.log.back().step << " (" << res.halt_flag
              << ")\n";
    return kExitHalt;
  }
  return kExitOk;
}

// -------------------------------------------------- estimate-ratio / -divergence

struct EstimateArgs {
  std::string p_arg, q_arg;
  std::string divergence = "pearson";
  int steps = 10000;
  int batch = 128;
  double lr = 1e-3;
  double ratio_scale = 16.0;  // estimation default; training keeps 2 (see README)
  double relative_alpha = 0.0;
  int samples = 8000;  // per side, when the input is an analytic spec
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string grid;  // "lo:hi:n" for 1D analytic pairs
  std::string ratio_estimator = "fit";  // or "empirical" (exact row counting)
};

namespace detail {

struct GridSpec {
  double lo = -2.0, hi = 3.0;
  int n = 101;
};

inline GridSpec parse_grid(const std::string& text) {
  GridSpec g;
  if (text.empty()) return g;
  if (std::sscanf(text.c_str(), "%lf:%lf:%d", &g.lo, &g.hi, &g.n) != 3 || !(g.lo < g.hi) ||
      g.n < 2)
    throw UsageError("bad --grid, expected lo:hi:n with lo < hi, n >= 2: " + text);
  return g;
}

struct ResolvedPair {
  PointSource p, q;
  Batch p_train, q_train;
  int dim = 0;
};

inline ResolvedPair resolve_pair(const EstimateArgs& a, std::mt19937_64& rng) {
  ResolvedPair r;
  r.p = resolve_source(a.p_arg, a.samples, rng);
  r.q = resolve_source(a.q_arg, a.samples, rng);
  r.p_train = r.p.analytic() ? sample(*r.p.spec, a.samples, rng) : r.p.points;
  r.q_train = r.q.analytic() ? sample(*r.q.spec, a.samples, rng) : r.q.points;
  if (r.p_train.cols() != r.q_train.cols())
    throw UsageError("dimension mismatch between --p and --q");
  r.dim = static_cast<int>(r.p_train.cols());
  return r;
}

inline RatioModel fit_from_args(const EstimateArgs& a, const ResolvedPair& pair,
                                std::mt19937_64& rng) {
  FitConfig cfg;
  try {
    cfg.gen = FGen::parse(a.divergence);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.steps < 0 || a.batch < 1 || !(a.lr > 0.0) || !(a.ratio_scale > 0.0) ||
      a.relative_alpha < 0.0 || a.relative_alpha >= 1.0 || a.samples < 1)
    throw UsageError("invalid estimation parameters");
  cfg.steps = a.steps;
  cfg.batch = a.batch;
  cfg.lr = a.lr;
  cfg.scale = a.ratio_scale;
  cfg.relative_alpha = a.relative_alpha;
  return fit_ratio(cfg, pair.p_train, pair.q_train, rng);
}

// Empirical pmfs by exact row matching; demands identical supports.
inline DiscretePair empirical_pair(const Batch& p_pts, const Batch& q_pts) {
  std::map<std::vector<double>, std::pair<std::int64_t, std::int64_t>> counts;
  auto key = [](const Batch& b, int i) {
    std::vector<double> k(static_cast<size_t>(b.cols()));
    for (int j = 0; j < b.cols(); ++j) k[static_cast<size_t>(j)] = b(i, j);
    return k;
  };
  for (int i = 0; i < p_pts.rows(); ++i) ++counts[key(p_pts, i)].first;
  for (int i = 0; i < q_pts.rows(); ++i) ++counts[key(q_pts, i)].second;
  Eigen::VectorXd p(static_cast<int>(counts.size())), q(static_cast<int>(counts.size()));
  int i = 0;
  for (const auto& [k, c] : counts) {
    if (c.first == 0 || c.second == 0)
      throw UsageError("empirical estimator needs matching supports in --p and --q");
    p(i) = static_cast<double>(c.first) / p_pts.rows();
    q(i) = static_cast<double>(c.second) / q_pts.rows();
    ++i;
  }
  // pin the pmf sums exactly to 1 before validation
  int ip, iq;
  p.maxCoeff(&ip);
  q.maxCoeff(&iq);
  p(ip) += 1.0 - p.sum();
  q(iq) += 1.0 - q.sum();
  return DiscretePair(p, q);
}

}  // namespace detail

inline int cmd_estimate_ratio(const EstimateArgs& args) {
  if (args.p_arg.empty() || args.q_arg.empty()) throw UsageError("--p and --q are required");
  if (args.out.empty()) throw UsageError("--out is required");
  const std::uint64_t seed = detail::resolve_seed(args.seed);
  std::mt19937_64 rng(seed);

  const auto pair = detail::resolve_pair(args, rng);
  const bool analytic = pair.p.analytic() && pair.q.analytic();
  const bool use_grid = analytic && pair.dim == 1;
  if (!use_grid && !args.grid.empty()) throw UsageError("--grid needs a 1D analytic pair");
  const detail::GridSpec grid = use_grid ? detail::parse_grid(args.grid) : detail::GridSpec{};

  const RatioModel model = detail::fit_from_args(args, pair, rng);

  const fs::path dir(args.out);
  fs::create_directories(dir);

  // Evaluation set: a 1D grid when both sides are analytic, otherwise
  // held-out draws from q (or the provided q rows for CSV input).
  Batch eval_pts;
  if (use_grid) {
    eval_pts.resize(grid.n, 1);
    for (int i = 0; i < grid.n; ++i)
      eval_pts(i, 0) = grid.lo + (grid.hi - grid.lo) * i / (grid.n - 1);
  } else {
    eval_pts = pair.q.analytic() ? sample(*pair.q.spec, 2000, rng) : pair.q.points;
  }

  const Eigen::VectorXd r_fit = ratio_forward(model, eval_pts);
  Eigen::VectorXd r_true;
  if (analytic) {
    r_true.resize(eval_pts.rows());
    for (int i = 0; i < eval_pts.rows(); ++i)
      r_true(i) = analytic_ratio(*pair.p.spec, *pair.q.spec,
                                 Eigen::RowVectorXd(eval_pts.row(i)));
  }

  {
    std::string csv;
    for (int i = 0; i < eval_pts.rows(); ++i) {
      for (int j = 0; j < eval_pts.cols(); ++j) csv += detail::fmt17(eval_pts(i, j)) + ",";
      csv += detail::fmt17(r_fit(i));
      if (analytic) csv += ',' + detail::fmt17(r_true(i));
      csv += '\n';
    }
    std::string header = "x";
    for (int j = 1; j < eval_pts.cols(); ++j) header += ",x" + std::to_string(j + 1);
    header += ",r_fit";
    if (analytic) header += ",r_true";
    detail::write_text(dir / "ratio_eval.csv", header + "\n" + csv);
  }

  // Mean fitted ratio over q-distributed points: 1.0 in expectation at the
  // exact ratio, since E_q[p/q] integrates p.
  const Batch q_eval = pair.q.analytic() ? sample(*pair.q.spec, 2000, rng) : pair.q.points;
  json summary;
  summary["divergence"] = FGen::parse(args.divergence).name();
  summary["seed"] = seed;
  summary["steps"] = args.steps;
  summary["ratio_scale"] = args.ratio_scale;
  summary["relative_alpha"] = args.relative_alpha;
  summary["mean_ratio_q"] = ratio_forward(model, q_eval).mean();
  if (analytic) {
    const double mse = (r_fit - r_true).squaredNorm() / r_true.size();
    summary["mse"] = mse;
    summary["relative_mse"] = (r_fit - r_true).squaredNorm() / r_true.squaredNorm();
  }
  const std::string text = summary.dump(2) + "\n";
  detail::write_text(dir / "summary.json", text);
  std::cout << text;
  return kExitOk;
}

inline int cmd_estimate_divergence(const EstimateArgs& args) {
  if (args.p_arg.empty() || args.q_arg.empty()) throw UsageError("--p and --q are required");
  const std::uint64_t seed = detail::resolve_seed(args.seed);
  std::mt19937_64 rng(seed);

  FGen gen = FGen::pearson();
  try {
    gen = FGen::parse(args.divergence);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  json out;
  out["divergence"] = gen.name();
  out["seed"] = seed;
  out["estimator"] = args.ratio_estimator;

  if (args.ratio_estimator == "empirical") {
    const auto pair = detail::resolve_pair(args, rng);
    const DiscretePair emp = detail::empirical_pair(pair.p_train, pair.q_train);
    const Eigen::VectorXd r = emp.ratio();
    out["plugin"] = discrete_plugin_value(gen, emp, r);
    out["variational"] = discrete_variational_value(gen, emp, r);
    out["support_size"] = emp.size();
  } else if (args.ratio_estimator == "fit") {
    const auto pair = detail::resolve_pair(args, rng);
    const RatioModel model = detail::fit_from_args(args, pair, rng);
    const Batch p_eval = pair.p.analytic() ? sample(*pair.p.spec, 4000, rng) : pair.p.points;
    const Batch q_eval = pair.q.analytic() ? sample(*pair.q.spec, 4000, rng) : pair.q.points;
    out["plugin"] = estimate_divergence_plugin(gen, model, q_eval);
    out["variational"] = estimate_divergence_variational(gen, model, p_eval, q_eval);
    if (pair.p.analytic() && pair.q.analytic() &&
        pair.p.spec->kind == DistSpec::Kind::gaussian &&
        pair.q.spec->kind == DistSpec::Kind::gaussian && gen.name() == "kl")
      out["analytic"] = analytic_kl_gaussians(*pair.p.spec, *pair.q.spec);
  } else {
    throw UsageError("--ratio-estimator must be fit or empirical");
  }

  const std::string text = out.dump(2) + "\n";
  if (!args.out.empty()) {
    const fs::path dir(args.out);
    fs::create_directories(dir);
    detail::write_text(dir / "estimate.json", text);
  }
  std::cout << text;
  return kExitOk;
}

// ------------------------------------------------------------------- run

inline int run(int argc, char** argv) {
  CLI::App app{"density-ratio estimation and adversarial generative training"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "run the alternating D-step/G-step loop");
  tr->add_option("--divergence", ta.divergence,
                 "kl | pearson | rkl | alpha:<a> | power:<b>");
  tr->add_option("--gstep", ta.gstep, "generator objective: f | fprime | conjugate");
  tr->add_option("--dataset", ta.dataset, "gauss2d | ring:<k>:<r>:<std> | gauss1d:<mu>:<sigma>");
  tr->add_option("--steps", ta.steps, "training iterations");
  tr->add_option("--batch", ta.batch, "minibatch size");
  tr->add_option("--lr", ta.lr, "Adam learning rate (both networks)");
  tr->add_option("--ratio-scale", ta.ratio_scale, "sigmoid cap C on the ratio head");
  tr->add_option("--relative-alpha", ta.relative_alpha,
                 "relative density ratio mixing weight in [0,1)");
  std::uint64_t ta_seed = 0;
  CLI::Option* ta_seed_opt = tr->add_option("--seed", ta_seed, "rng seed (else RATIO_FORGE_SEED, else 0)");
  tr->add_option("--out", ta.out, "output directory");
  tr->add_option("--log-every", ta.log_every, "diagnostic period in steps");
  tr->add_option("--snapshot-every", ta.snapshot_every,
                 "write samples_<step>.csv at logging steps divisible by this (0 = final only)");
  tr->add_option("--manifest", ta.manifest, "re-run the configuration of a manifest.json");

  EstimateArgs ra;
  CLI::App* er = app.add_subcommand("estimate-ratio", "fit a density ratio and evaluate it");
  EstimateArgs da;
  CLI::App* ed = app.add_subcommand("estimate-divergence",
                                    "two-step divergence estimate (fit ratio, then estimate)");
  std::uint64_t ra_seed = 0, da_seed = 0;
  CLI::Option *ra_seed_opt, *da_seed_opt;
  auto add_estimate_options = [](CLI::App* cmd, EstimateArgs& a, std::uint64_t& seed_var,
                                 CLI::Option** seed_opt) {
    cmd->add_option("--p", a.p_arg, "dataset spec or CSV path for the numerator");
    cmd->add_option("--q", a.q_arg, "dataset spec or CSV path for the denominator");
    cmd->add_option("--divergence", a.divergence, "kl | pearson | rkl | alpha:<a> | power:<b>");
    cmd->add_option("--steps", a.steps, "Adam steps for the fit");
    cmd->add_option("--batch", a.batch, "minibatch size");
    cmd->add_option("--lr", a.lr, "Adam learning rate");
    cmd->add_option("--ratio-scale", a.ratio_scale, "sigmoid cap C on the ratio head");
    cmd->add_option("--relative-alpha", a.relative_alpha, "relative ratio mixing weight");
    cmd->add_option("--samples", a.samples, "training draws per analytic side");
    *seed_opt = cmd->add_option("--seed", seed_var, "rng seed (else RATIO_FORGE_SEED, else 0)");
    cmd->add_option("--out", a.out, "output directory");
  };
  add_estimate_options(er, ra, ra_seed, &ra_seed_opt);
  er->add_option("--grid", ra.grid, "evaluation grid lo:hi:n (1D analytic pairs)");
  add_estimate_options(ed, da, da_seed, &da_seed_opt);
  ed->add_option("--ratio-estimator", da.ratio_estimator,
                 "fit (default) or empirical (exact row counting)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (tr->parsed()) {
      if (ta_seed_opt->count()) ta.seed = ta_seed;
      return cmd_train(ta);
    }
    if (er->parsed()) {
      if (ra_seed_opt->count()) ra.seed = ra_seed;
      return cmd_estimate_ratio(ra);
    }
    if (da_seed_opt->count()) da.seed = da_seed;
    return cmd_estimate_divergence(da);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace rf::cli
