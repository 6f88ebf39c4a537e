#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "cgfm/common.hpp"
#include "cgfm/dataio.hpp"
#include "cgfm/evalkit.hpp"
#include "cgfm/netcore.hpp"
#include "cgfm/pathkit.hpp"
#include "cgfm/sampling.hpp"
#include "cgfm/scheduler.hpp"
#include "cgfm/training.hpp"
#include "cgfm/verify.hpp"

namespace cgfm::cli {

// ---------------------------------------------------------------------------
// Shared option blocks
// ---------------------------------------------------------------------------

struct DataOpts {
  std::string data;
  std::string datetime_col;
  int history = 96;
  int horizon = 24;
  std::string ratios = "0.6,0.2,0.2";
};

inline SplitRatios parse_ratios(const std::string& s) {
  std::vector<double> vals;
  std::string cur;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      const auto v = detail::parse_double(cur);
      if (!v.has_value()) throw ConfigError("ratios: bad value '" + cur + "' in '" + s + "'");
      vals.push_back(*v);
      cur.clear();
    } else {
      cur.push_back(s[i]);
    }
  }
  if (vals.size() != 3) {
    throw ConfigError("ratios: expected three comma-separated values, got '" + s + "'");
  }
  return SplitRatios{vals[0], vals[1], vals[2]};
}

inline void add_data_options(CLI::App* cmd, DataOpts& o) {
  cmd->add_option("--data", o.data, "Input CSV (header row, optional datetime column)")
      ->required();
  cmd->add_option("--datetime-col", o.datetime_col,
                  "Name of the datetime column to drop (default: autodetect)");
  cmd->add_option("--history", o.history, "History window length L")->capture_default_str();
  cmd->add_option("--horizon", o.horizon, "Forecast horizon Fh")->capture_default_str();
  cmd->add_option("--ratios", o.ratios, "Chronological train,val,test split ratios")
      ->capture_default_str();
}

inline WindowedDataset load_dataset(const DataOpts& o) {
  LoadedCsv csv = load_csv(o.data, o.datetime_col);
  return make_windows(csv.raw, o.history, o.horizon, parse_ratios(o.ratios),
                      std::move(csv.channel_names));
}

inline SourceMode parse_source(const std::string& s, double sigma) {
  if (s == "noise") return SourceMode::noise();
  if (s == "aux") return SourceMode::aux_output(sigma);
  throw ConfigError("source: unknown '" + s + "' (expected noise | aux)");
}

/// "builtin-linear" fits the closed-form ridge auxiliary; anything else is a
/// path to an auxiliary CSV aligned to the dataset windows.
inline AuxPredictions resolve_aux(const std::string& spec, const WindowedDataset& ds) {
  if (spec == "builtin-linear") return fit_linear_aux(ds);
  return load_aux_csv(spec, ds);
}

inline int thread_count() {
  const char* env = std::getenv("CGFM_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  const int v = std::atoi(env);
  if (v < 1) return 1;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  return std::min<int>(v, static_cast<int>(hw));
}

inline void write_resolved_config(const std::string& out_dir, const std::string& resolved) {
  std::filesystem::create_directories(out_dir);
  write_file_bytes(out_dir + "/config.resolved", resolved);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
  DataOpts data;
  std::string scheduler = "condot";
  std::string target = "x1";
  std::string source = "noise";
  std::string aux = "builtin-linear";
  double sigma = 1.0;
  int epochs = 10;
  long max_steps = 0;
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  int val_every = 200;
  int patience = 10;
  long val_max_windows = 200;
  int width = 256;
  int depth = 2;
  int embed_k = 8;
  std::string out;
};

inline void add_train_options(CLI::App* cmd, TrainOpts& o) {
  add_data_options(cmd, o.data);
  cmd->add_option("--scheduler", o.scheduler, "condot | poly:<n> | vp | cosine")
      ->capture_default_str();
  cmd->add_option("--target", o.target, "Prediction target: ut | x0 | x1")
      ->capture_default_str();
  cmd->add_option("--source", o.source, "Source distribution: noise | aux")
      ->capture_default_str();
  cmd->add_option("--aux", o.aux, "Auxiliary predictions: builtin-linear or a CSV path")
      ->capture_default_str();
  cmd->add_option("--sigma", o.sigma, "Smoothing noise scale for aux source mode")
      ->capture_default_str();
  cmd->add_option("--epochs", o.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--max-steps", o.max_steps, "Hard step cap (0 = epochs only)")
      ->capture_default_str();
  cmd->add_option("--batch-size", o.batch_size, "Batch size")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Root seed")->capture_default_str();
  cmd->add_option("--val-every", o.val_every, "Validation cadence in steps (0 = off)")
      ->capture_default_str();
  cmd->add_option("--patience", o.patience,
                  "Early stop after this many non-improving validations (0 = off)")
      ->capture_default_str();
  cmd->add_option("--val-max-windows", o.val_max_windows, "Cap on validation windows")
      ->capture_default_str();
  cmd->add_option("--width", o.width, "Hidden layer width")->capture_default_str();
  cmd->add_option("--depth", o.depth, "Number of hidden layers")->capture_default_str();
  cmd->add_option("--embed-k", o.embed_k, "Time embedding frequencies")->capture_default_str();
  cmd->add_option("--out", o.out, "Output directory")->required();
}

inline TrainConfig to_train_config(const TrainOpts& o) {
  TrainConfig tc;
  tc.scheduler = parse_scheduler(o.scheduler);
  tc.target = parse_target(o.target);
  tc.source = parse_source(o.source, o.sigma);
  tc.epochs = o.epochs;
  tc.max_steps = o.max_steps;
  tc.batch_size = o.batch_size;
  tc.lr = o.lr;
  tc.seed = o.seed;
  tc.val_every = o.val_every;
  tc.patience = o.patience;
  tc.val_max_windows = o.val_max_windows;
  if (o.width < 1 || o.depth < 1) throw ConfigError("train: width and depth must be >= 1");
  tc.hidden.assign(static_cast<std::size_t>(o.depth), o.width);
  tc.embed_k = o.embed_k;
  return tc;
}

inline void run_train(const TrainOpts& o, const std::string& resolved) {
  const TrainConfig tc = to_train_config(o);  // validates before anything is written
  write_resolved_config(o.out, resolved);
  const WindowedDataset ds = load_dataset(o.data);
  std::vector<AuxPredictions> aux;  // 0 or 1 element
  if (tc.source.mode == SourceMode::Mode::AuxOutput) aux.push_back(resolve_aux(o.aux, ds));

  const TrainResult res = train(ds, aux.empty() ? nullptr : &aux[0], tc);
  write_file_bytes(o.out + "/params.bin", save_params(res.net));
  write_train_log(res.log, o.out + "/train_log.csv");
  std::cout << "trained " << res.steps << " steps";
  if (res.best_step >= 0) std::cout << ", best val " << res.best_val << " at step " << res.best_step;
  if (res.stopped_early) std::cout << " (early stop)";
  std::cout << "\n";
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

struct ForecastOpts {
  DataOpts data;
  std::string params;
  std::string split = "test";
  std::string scheduler = "condot";
  std::string target = "x1";
  std::string source = "noise";
  std::string aux = "builtin-linear";
  double sigma = 1.0;
  int steps = 20;
  int num_samples = 1;
  double eps_den = 1e-6;
  std::uint64_t seed = 1;
  std::string out;
};

inline void add_forecast_options(CLI::App* cmd, ForecastOpts& o) {
  add_data_options(cmd, o.data);
  cmd->add_option("--params", o.params, "Trained parameter file")->required();
  cmd->add_option("--split", o.split, "Window split to forecast: train | val | test")
      ->capture_default_str();
  cmd->add_option("--scheduler", o.scheduler, "condot | poly:<n> | vp | cosine")
      ->capture_default_str();
  cmd->add_option("--target", o.target, "Prediction target: ut | x0 | x1")
      ->capture_default_str();
  cmd->add_option("--source", o.source, "Source distribution: noise | aux")
      ->capture_default_str();
  cmd->add_option("--aux", o.aux, "Auxiliary predictions: builtin-linear or a CSV path")
      ->capture_default_str();
  cmd->add_option("--sigma", o.sigma, "Smoothing noise scale for aux source mode")
      ->capture_default_str();
  cmd->add_option("--steps", o.steps, "Midpoint integration steps N")->capture_default_str();
  cmd->add_option("--num-samples", o.num_samples, "Trajectories averaged per window")
      ->capture_default_str();
  cmd->add_option("--eps-den", o.eps_den, "Denominator floor / endpoint clamp")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "Root seed")->capture_default_str();
  cmd->add_option("--out", o.out, "Output directory")->required();
}

inline void run_forecast(const ForecastOpts& o, const std::string& resolved) {
  SampleConfig sc;
  sc.steps = o.steps;
  sc.target = parse_target(o.target);
  sc.source = parse_source(o.source, o.sigma);
  sc.eps_den = o.eps_den;
  sc.num_samples = o.num_samples;
  sc.seed = o.seed;
  const Scheduler sched = parse_scheduler(o.scheduler);
  const Split split = parse_split(o.split);
  if (sc.steps < 1) throw ConfigError("forecast: steps must be >= 1");

  write_resolved_config(o.out, resolved);
  const WindowedDataset ds = load_dataset(o.data);
  const VelocityNet net = load_params(read_file_bytes(o.params));
  if (net.C != ds.C() || net.L != ds.L || net.Fh != ds.Fh) {
    throw ConfigError("forecast: params trained for C=" + std::to_string(net.C) + ", L=" +
                      std::to_string(net.L) + ", Fh=" + std::to_string(net.Fh) +
                      "; dataset has C=" + std::to_string(ds.C()) + ", L=" +
                      std::to_string(ds.L) + ", Fh=" + std::to_string(ds.Fh));
  }
  std::vector<AuxPredictions> aux;
  AuxLookup lookup;
  if (sc.source.mode == SourceMode::Mode::AuxOutput) {
    aux.push_back(resolve_aux(o.aux, ds));
    lookup = make_aux_lookup(aux[0], ds.C(), ds.Fh);
  }

  const std::vector<long> windows = ds.windows_of(split);
  if (windows.empty()) throw SizingError("forecast: split '" + o.split + "' has no windows");

  ForecastRows fc;
  fc.window_idx = windows;
  fc.values.resize(static_cast<Eigen::Index>(windows.size()),
                   static_cast<Eigen::Index>(ds.C()) * ds.Fh);

  // Per-window seeds derive from the window index, so the forecast for a
  // window is identical however the windows are distributed over workers.
  const int workers = std::min<int>(thread_count(), static_cast<int>(windows.size()));
  std::atomic<long> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto body = [&]() {
    try {
      for (long i = cursor.fetch_add(1); i < static_cast<long>(windows.size());
           i = cursor.fetch_add(1)) {
        const long w = windows[static_cast<std::size_t>(i)];
        const Mat f = sample(net, ds.history(w), sc, sched, lookup, w);
        fc.values.row(i) = flatten_rowmajor(f).transpose();
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(error_mu);
      if (!first_error) first_error = std::current_exception();
    }
  };
  if (workers <= 1) {
    body();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < workers; ++k) pool.emplace_back(body);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  save_forecast_csv(fc, o.out + "/forecast.csv", ds.C(), ds.Fh);
  write_json_file(norm_stats_to_json(ds), o.out + "/norm_stats.json");
  std::cout << "forecast " << windows.size() << " windows (split " << o.split << ") -> " << o.out
            << "/forecast.csv\n";
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOpts {
  DataOpts data;
  std::string forecast;
  std::vector<std::string> aggregate;
  std::string scheduler = "condot";
  std::string target = "x1";
  std::string source = "noise";
  double sigma = 1.0;
  int steps = 20;
  std::uint64_t seed = 1;
  long wall_ms = 0;
  std::string out;
};

inline void add_evaluate_options(CLI::App* cmd, EvaluateOpts& o) {
  // --data is validated manually: aggregate mode needs neither data nor forecast
  cmd->add_option("--data", o.data.data, "Input CSV (header row, optional datetime column)");
  cmd->add_option("--datetime-col", o.data.datetime_col,
                  "Name of the datetime column to drop (default: autodetect)");
  cmd->add_option("--history", o.data.history, "History window length L")->capture_default_str();
  cmd->add_option("--horizon", o.data.horizon, "Forecast horizon Fh")->capture_default_str();
  cmd->add_option("--ratios", o.data.ratios, "Chronological train,val,test split ratios")
      ->capture_default_str();
  cmd->add_option("--forecast", o.forecast, "Forecast CSV to score");
  cmd->add_option("--aggregate", o.aggregate,
                  "Report JSON paths to pool into mean/std across seeds")
      ->configurable(false);
  cmd->add_option("--scheduler", o.scheduler, "Fingerprint: scheduler")->capture_default_str();
  cmd->add_option("--target", o.target, "Fingerprint: prediction target")->capture_default_str();
  cmd->add_option("--source", o.source, "Fingerprint: source mode")->capture_default_str();
  cmd->add_option("--sigma", o.sigma, "Fingerprint: smoothing scale")->capture_default_str();
  cmd->add_option("--steps", o.steps, "Fingerprint: integration steps")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Fingerprint: root seed")->capture_default_str();
  cmd->add_option("--wall-ms", o.wall_ms,
                  "Wall-clock milliseconds to record (caller-supplied so the report "
                  "stays byte-reproducible)")
      ->capture_default_str();
  cmd->add_option("--out", o.out, "Output directory")->required();
}

inline void run_evaluate(const EvaluateOpts& o, const std::string& resolved) {
  if (!o.aggregate.empty()) {
    std::vector<Report> reports;
    for (const auto& p : o.aggregate) reports.push_back(report_from_json(read_json_file(p)));
    const AggregateReport agg = aggregate_reports(reports);
    write_resolved_config(o.out, resolved);
    write_json_file(aggregate_to_json(agg), o.out + "/aggregate.json");
    std::cout << "aggregated " << agg.n_runs << " reports: mse " << agg.mse_mean << " +/- "
              << agg.mse_std << "\n";
    return;
  }
  if (o.data.data.empty() || o.forecast.empty()) {
    throw ConfigError("evaluate: need --data and --forecast (or --aggregate)");
  }
  write_resolved_config(o.out, resolved);
  const WindowedDataset ds = load_dataset(o.data);
  const ForecastRows fc = load_forecast_csv(o.forecast, ds.C(), ds.Fh);
  if (fc.window_idx.empty()) throw SizingError("evaluate: forecast '" + o.forecast + "' is empty");

  Mat truth(fc.values.rows(), fc.values.cols());
  for (std::size_t i = 0; i < fc.window_idx.size(); ++i) {
    const long w = fc.window_idx[i];
    if (w < 0 || w >= ds.n_windows()) {
      throw LookupError("evaluate: forecast row " + std::to_string(i) + " references window " +
                        std::to_string(w) + ", dataset has " + std::to_string(ds.n_windows()) +
                        " windows");
    }
    truth.row(static_cast<Eigen::Index>(i)) = flatten_rowmajor(ds.future(w)).transpose();
  }

  Report rep;
  rep.fingerprint = Fingerprint{o.scheduler, o.target, o.source, o.sigma, o.steps, o.seed};
  rep.metrics = compute_metrics(fc.values, truth);
  rep.wall_ms = o.wall_ms;
  write_json_file(report_to_json(rep), o.out + "/report.json");
  std::cout << "mse=" << fmt_g17(rep.metrics.mse) << " mae=" << fmt_g17(rep.metrics.mae)
            << " n_windows=" << rep.metrics.n_windows << "\n";
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct VerifyOpts {
  bool quick = false;
  std::string json_out;
};

inline void add_verify_options(CLI::App* cmd, VerifyOpts& o) {
  cmd->add_flag("--quick", o.quick, "Reduced sample counts (smoke budget)");
  cmd->add_option("--json", o.json_out, "Write the per-check JSON here instead of stdout");
}

inline bool run_verify(const VerifyOpts& o) {
  const std::vector<CheckResult> results = run_verification(o.quick);
  json j;
  j["checks"] = json::array();
  bool all_pass = true;
  int n_pass = 0;
  for (const auto& r : results) {
    json c;
    c["name"] = r.name;
    c["pass"] = r.pass;
    c["detail"] = r.detail;
    c["ms"] = r.ms;
    j["checks"].push_back(c);
    all_pass = all_pass && r.pass;
    n_pass += r.pass ? 1 : 0;
  }
  j["all_pass"] = all_pass;
  if (o.json_out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_json_file(j, o.json_out);
  }
  std::cerr << "verification: " << n_pass << "/" << results.size() << " checks passed\n";
  return all_pass;
}

// ---------------------------------------------------------------------------
// pca
// ---------------------------------------------------------------------------

struct PcaOpts {
  std::string forecast;
  std::string out;
};

inline void add_pca_options(CLI::App* cmd, PcaOpts& o) {
  cmd->add_option("--forecast", o.forecast, "Forecast CSV to project")->required();
  cmd->add_option("--out", o.out, "Output CSV path (window_idx, pc1, pc2)")->required();
}

inline void run_pca(const PcaOpts& o) {
  const detail::IndexedCsv csv = detail::read_indexed_csv(o.forecast, -1);
  const PcaTrajectory pca = pca_trajectory(csv.values);
  save_pca_csv(pca, csv.window_idx, o.out);
  std::cout << "pc1_explained=" << fmt_g17(pca.explained1)
            << " pc2_explained=" << fmt_g17(pca.explained2) << "\n";
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

namespace detail {

/// Keeps only the `<prefix>.key=value` lines of a full config dump.
inline std::string filter_config_lines(const std::string& full, const std::string& prefix) {
  std::istringstream in(full);
  std::ostringstream out;
  std::string line;
  const std::string want = prefix + ".";
  while (std::getline(in, line)) {
    if (line.rfind(want, 0) == 0) out << line << "\n";
  }
  return out.str();
}

}  // namespace detail

/// @brief Parses and runs one subcommand. Exit codes: 0 ok, 1 runtime failure,
/// 2 usage/config error, 3 verification failure.
///
/// Every option can come from a config file (--config FILE, dotted keys like
/// `train.seed=1`); command-line flags override file values. Subcommands with
/// an output directory echo their fully resolved options to
/// <out>/config.resolved before doing any work, so a run is reproduced with
/// `cgfm --config <out>/config.resolved <subcommand>`.
inline int cgfm_main(int argc, const char* const* argv) {
  CLI::App app{"Conditional guided flow matching for time-series forecasting"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a config file (see config.resolved)");

  TrainOpts topts;
  ForecastOpts fopts;
  EvaluateOpts eopts;
  VerifyOpts vopts;
  PcaOpts popts;

  CLI::App* cmd_train = app.add_subcommand("train", "Train a velocity network");
  add_train_options(cmd_train, topts);

  CLI::App* cmd_forecast =
      app.add_subcommand("forecast", "Sample forecasts for a split from trained parameters");
  add_forecast_options(cmd_forecast, fopts);

  CLI::App* cmd_evaluate =
      app.add_subcommand("evaluate", "Score a forecast CSV or aggregate reports");
  add_evaluate_options(cmd_evaluate, eopts);

  CLI::App* cmd_verify = app.add_subcommand("verify", "Run the numerical oracle suite");
  add_verify_options(cmd_verify, vopts);

  CLI::App* cmd_pca = app.add_subcommand("pca", "Project forecast rows onto two principal axes");
  add_pca_options(cmd_pca, popts);

  for (CLI::App* sub : {cmd_train, cmd_forecast, cmd_evaluate, cmd_verify, cmd_pca}) {
    sub->fallthrough();  // lets --config appear after the subcommand name too
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto resolved = [&](const CLI::App* sub) {
    return detail::filter_config_lines(app.config_to_str(true, false), sub->get_name());
  };

  try {
    if (cmd_train->parsed()) {
      run_train(topts, resolved(cmd_train));
    } else if (cmd_forecast->parsed()) {
      run_forecast(fopts, resolved(cmd_forecast));
    } else if (cmd_evaluate->parsed()) {
      run_evaluate(eopts, resolved(cmd_evaluate));
    } else if (cmd_verify->parsed()) {
      return run_verify(vopts) ? 0 : 3;
    } else if (cmd_pca->parsed()) {
      run_pca(popts);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "[cgfm] error: " << e.what() << "\n";
    return 2;
  } catch (const SizingError& e) {
    // sizing problems are fixed by changing flags (window lengths, batch size),
    // so they count as configuration errors
    std::cerr << "[cgfm] error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "[cgfm] error: " << e.what() << "\n";
    return 1;
  }
}

/// Convenience wrapper for in-process invocations.
inline int cgfm_main(const std::vector<std::string>& args) {
  std::vector<std::string> full;
  full.reserve(args.size() + 1);
  full.push_back("cgfm");
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(full.size());
  for (const auto& s : full) argv.push_back(s.c_str());
  return cgfm_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace cgfm::cli
