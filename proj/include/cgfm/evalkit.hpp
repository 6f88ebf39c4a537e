#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgfm/common.hpp"
#include "cgfm/dataio.hpp"
#include "cgfm/rng.hpp"

namespace cgfm {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  long n_windows = 0;
};

/// Mean squared / absolute error over all entries of aligned forecast rows.
inline Metrics compute_metrics(const Mat& pred, const Mat& truth) {
  require_same_shape(pred, truth, "compute_metrics");
  if (pred.rows() == 0) throw SizingError("compute_metrics: empty window set");
  Metrics m;
  const Mat diff = pred - truth;
  m.mse = diff.array().square().mean();
  m.mae = diff.array().abs().mean();
  m.n_windows = pred.rows();
  return m;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

using json = nlohmann::ordered_json;

/// Identifies the sampling configuration a report was produced under.
struct Fingerprint {
  std::string scheduler;
  std::string target;
  std::string source;
  double sigma = 0.0;
  int steps = 0;
  std::uint64_t seed = 0;

  bool same_config(const Fingerprint& o) const {
    return scheduler == o.scheduler && target == o.target && source == o.source &&
           sigma == o.sigma && steps == o.steps;
  }
};

struct Report {
  Fingerprint fingerprint;
  Metrics metrics;
  long wall_ms = 0;  ///< caller-supplied, so report bytes stay reproducible
};

inline json fingerprint_to_json(const Fingerprint& f) {
  json j;
  j["scheduler"] = f.scheduler;
  j["target"] = f.target;
  j["source"] = f.source;
  j["sigma"] = f.sigma;
  j["steps"] = f.steps;
  j["seed"] = f.seed;
  return j;
}

inline Fingerprint fingerprint_from_json(const json& j) {
  Fingerprint f;
  f.scheduler = j.at("scheduler").get<std::string>();
  f.target = j.at("target").get<std::string>();
  f.source = j.at("source").get<std::string>();
  f.sigma = j.at("sigma").get<double>();
  f.steps = j.at("steps").get<int>();
  f.seed = j.at("seed").get<std::uint64_t>();
  return f;
}

inline json report_to_json(const Report& r) {
  json j;
  j["fingerprint"] = fingerprint_to_json(r.fingerprint);
  j["mse"] = r.metrics.mse;
  j["mae"] = r.metrics.mae;
  j["n_windows"] = r.metrics.n_windows;
  j["wall_ms"] = r.wall_ms;
  return j;
}

inline Report report_from_json(const json& j) {
  Report r;
  r.fingerprint = fingerprint_from_json(j.at("fingerprint"));
  r.metrics.mse = j.at("mse").get<double>();
  r.metrics.mae = j.at("mae").get<double>();
  r.metrics.n_windows = j.at("n_windows").get<long>();
  r.wall_ms = j.at("wall_ms").get<long>();
  return r;
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failure on '" + path + "'");
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return j;
}

/// Normalization stats emitted alongside forecasts so raw units stay
/// recoverable: per-channel train-split mean and population std.
inline json norm_stats_to_json(const WindowedDataset& ds) {
  json j;
  j["channels"] = ds.channel_names;
  j["mean"] = std::vector<double>(ds.mean.data(), ds.mean.data() + ds.mean.size());
  j["std"] = std::vector<double>(ds.stddev.data(), ds.stddev.data() + ds.stddev.size());
  return j;
}

/// @brief Pools same-configuration reports across seeds: per-metric mean and
/// sample standard deviation (n-1). Mixed configurations are rejected.
struct AggregateReport {
  Fingerprint fingerprint;  ///< seed field is not meaningful here
  std::vector<std::uint64_t> seeds;
  long n_runs = 0;
  double mse_mean = 0.0, mse_std = 0.0;
  double mae_mean = 0.0, mae_std = 0.0;
};

inline AggregateReport aggregate_reports(const std::vector<Report>& reports) {
  if (reports.empty()) throw SizingError("aggregate_reports: no reports");
  AggregateReport agg;
  agg.fingerprint = reports[0].fingerprint;
  for (const auto& r : reports) {
    if (!r.fingerprint.same_config(agg.fingerprint)) {
      throw ConfigError("aggregate_reports: mixed configurations (scheduler/target/source/"
                        "sigma/steps must match; only seeds may differ)");
    }
    agg.seeds.push_back(r.fingerprint.seed);
  }
  agg.n_runs = static_cast<long>(reports.size());
  const auto mean_std = [&](auto pick) {
    double mean = 0.0;
    for (const auto& r : reports) mean += pick(r);
    mean /= agg.n_runs;
    double ss = 0.0;
    for (const auto& r : reports) ss += (pick(r) - mean) * (pick(r) - mean);
    const double sd = agg.n_runs > 1 ? std::sqrt(ss / (agg.n_runs - 1)) : 0.0;
    return std::pair<double, double>{mean, sd};
  };
  std::tie(agg.mse_mean, agg.mse_std) = mean_std([](const Report& r) { return r.metrics.mse; });
  std::tie(agg.mae_mean, agg.mae_std) = mean_std([](const Report& r) { return r.metrics.mae; });
  return agg;
}

inline json aggregate_to_json(const AggregateReport& a) {
  json j;
  json fp = fingerprint_to_json(a.fingerprint);
  fp.erase("seed");
  j["fingerprint"] = fp;
  j["seeds"] = a.seeds;
  j["n_runs"] = a.n_runs;
  j["mse_mean"] = a.mse_mean;
  j["mse_std"] = a.mse_std;
  j["mae_mean"] = a.mae_mean;
  j["mae_std"] = a.mae_std;
  return j;
}

// ---------------------------------------------------------------------------
// Synthetic series
// ---------------------------------------------------------------------------

/// @brief Sinusoid-mixture series: per channel, three sinusoids with periods
/// drawn from [16,40], [5,12], [60,120], amplitudes from [1,1.3], [0.15,0.25],
/// [0.05,0.15], phases from [0,2pi), plus N(0, noise_std^2) observation noise.
/// Same (T, C, seed, noise_std) reproduces the same matrix bit-for-bit.
inline Mat synth_sinmix(long T, int C, std::uint64_t seed, double noise_std = 0.05) {
  if (T < 200) {
    throw ConfigError("synth_sinmix: T must be >= 200 (got " + std::to_string(T) +
                      "); shorter series cannot cover the slow component");
  }
  if (C < 1) throw ConfigError("synth_sinmix: C must be >= 1");
  RngStream rng(derive_seed(seed, "synth"));
  Mat out(T, C);
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (int c = 0; c < C; ++c) {
    const double p1 = 16.0 + 24.0 * rng.uniform01();
    const double p2 = 5.0 + 7.0 * rng.uniform01();
    const double p3 = 60.0 + 60.0 * rng.uniform01();
    const double a1 = 1.0 + 0.3 * rng.uniform01();
    const double a2 = 0.15 + 0.10 * rng.uniform01();
    const double a3 = 0.05 + 0.10 * rng.uniform01();
    const double f1 = two_pi * rng.uniform01();
    const double f2 = two_pi * rng.uniform01();
    const double f3 = two_pi * rng.uniform01();
    for (long t = 0; t < T; ++t) {
      double v = a1 * std::sin(two_pi * t / p1 + f1) + a2 * std::sin(two_pi * t / p2 + f2) +
                 a3 * std::sin(two_pi * t / p3 + f3);
      if (noise_std > 0.0) v += noise_std * rng.normal();
      out(t, c) = v;
    }
  }
  return out;
}

/// @brief Deterministic, deliberately biased auxiliary forecasts for every
/// window: the true future shifted per channel by 0.5 * tanh(mean of the last
/// min(8, L) history steps). The shift tracks the local level, so its sign
/// varies across windows and the bias cannot be removed by a constant offset.
inline AuxPredictions synth_biased_aux(const WindowedDataset& ds) {
  const int C = ds.C();
  AuxPredictions aux;
  aux.provenance = AuxPredictions::Provenance::File;
  aux.rows = Mat::Zero(ds.n_windows(), static_cast<Eigen::Index>(C) * ds.Fh);
  const int tail = std::min(8, ds.L);
  for (long w = 0; w < ds.n_windows(); ++w) {
    const Mat h = ds.history(w);
    const Mat f = ds.future(w);
    for (int c = 0; c < C; ++c) {
      const double level = h.row(c).segment(ds.L - tail, tail).mean();
      const double bias = 0.5 * std::tanh(level);
      for (int s = 0; s < ds.Fh; ++s)
        aux.rows(w, static_cast<Eigen::Index>(c) * ds.Fh + s) = f(c, s) + bias;
    }
  }
  return aux;
}

// ---------------------------------------------------------------------------
// PCA trajectory projection
// ---------------------------------------------------------------------------

struct PcaTrajectory {
  Mat projected;  ///< n x 2 coordinates in chronological row order
  Vec pc1, pc2;  ///< principal directions, sign fixed by largest-|entry| > 0
  double explained1 = 0.0, explained2 = 0.0;  ///< variance ratios
};

namespace detail {

/// Dominant eigenvector of a PSD matrix; with ortho set, the dominant direction
/// of the orthogonal complement (the complement projection is re-applied every
/// iteration, which is far more stable than explicit deflation when the tail
/// eigenvalues vanish). Returns the zero vector when the complement is empty.
inline Vec power_iterate(const Mat& cov, const Vec* ortho = nullptr, int iters = 500,
                         double tol = 1e-9) {
  const auto project = [&](Vec& x) {
    if (ortho) x -= (*ortho) * ortho->dot(x);
  };
  Vec v = Vec::Ones(cov.rows());
  project(v);
  for (Eigen::Index k = 0; v.norm() < 1e-8 && k < cov.rows(); ++k) {
    v = Vec::Unit(cov.rows(), k);
    project(v);
  }
  if (v.norm() < 1e-8) return Vec::Zero(cov.rows());
  v.normalize();
  for (int i = 0; i < iters; ++i) {
    Vec next = cov * v;
    project(next);
    const double norm = next.norm();
    if (norm < 1e-300) return Vec::Zero(cov.rows());
    next /= norm;
    if ((next - v).norm() < tol) {
      v = next;
      break;
    }
    v = next;
  }
  // deterministic sign: component of largest magnitude is positive
  Eigen::Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  if (v[arg] < 0) v = -v;
  return v;
}

}  // namespace detail

/// @brief Projects flattened forecast rows onto their top two principal
/// components (power iteration with deflation). Row order is preserved so the
/// projection traces the forecast trajectory through time.
inline PcaTrajectory pca_trajectory(const Mat& rows) {
  if (rows.rows() < 3) {
    throw ConfigError("pca_trajectory: need at least 3 rows, got " + std::to_string(rows.rows()));
  }
  const Mat centered = rows.rowwise() - rows.colwise().mean();
  const Mat cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  const double total = cov.trace();
  if (!(total > 0.0)) throw NumericError("pca_trajectory: zero-variance input");

  PcaTrajectory out;
  out.pc1 = detail::power_iterate(cov);
  const double lam1 = out.pc1.dot(cov * out.pc1);
  out.pc2 = detail::power_iterate(cov, &out.pc1);
  const double lam2 = out.pc2.dot(cov * out.pc2);
  out.explained1 = lam1 / total;
  out.explained2 = lam2 / total;
  out.projected.resize(rows.rows(), 2);
  out.projected.col(0) = centered * out.pc1;
  out.projected.col(1) = centered * out.pc2;
  return out;
}

inline void save_pca_csv(const PcaTrajectory& pca, const std::vector<long>& window_idx,
                         const std::string& path) {
  if (static_cast<Eigen::Index>(window_idx.size()) != pca.projected.rows()) {
    throw ShapeError("save_pca_csv: index/projection row mismatch");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "window_idx,pc1,pc2\n";
  for (Eigen::Index r = 0; r < pca.projected.rows(); ++r) {
    out << window_idx[static_cast<std::size_t>(r)] << "," << fmt_g17(pca.projected(r, 0)) << ","
        << fmt_g17(pca.projected(r, 1)) << "\n";
  }
}

}  // namespace cgfm
