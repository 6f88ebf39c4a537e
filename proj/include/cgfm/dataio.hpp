#pragma once

#include <array>
#include <charconv>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cgfm/common.hpp"
#include "cgfm/pathkit.hpp"

namespace cgfm {

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct LoadedCsv {
  Mat raw;  ///< time-major, rows in file order
  std::vector<std::string> channel_names;
  bool nonmonotone_timestamps = false;  ///< set when a datetime column decreases
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::optional<double> parse_double(const std::string& s) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  if (b == e) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

}  // namespace detail

/// @brief Loads a numeric CSV with a header row into a time-major matrix.
///
/// A datetime column (named via datetime_col, or autodetected as a non-numeric
/// first column) is dropped from the channels. Missing or non-finite cells are
/// rejected with their row and column. Non-monotone timestamps produce a
/// warning; row order is preserved.
inline LoadedCsv load_csv(const std::string& path, const std::string& datetime_col = "") {
  std::ifstream in(path);
  if (!in) throw IoError("load_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("load_csv: empty file '" + path + "'");
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::vector<std::string> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(line);
  }
  if (rows.empty()) throw IoError("load_csv: no data rows in '" + path + "'");

  int dt_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!datetime_col.empty() && header[c] == datetime_col) dt_col = static_cast<int>(c);
  }
  if (datetime_col.empty()) {
    const auto first = detail::split_csv_line(rows[0]);
    if (!first.empty() && !detail::parse_double(first[0]).has_value()) dt_col = 0;
  } else if (dt_col < 0) {
    throw ConfigError("load_csv: datetime column '" + datetime_col + "' not found");
  }

  LoadedCsv out;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (static_cast<int>(c) != dt_col) out.channel_names.push_back(header[c]);
  }
  const std::size_t n_ch = out.channel_names.size();
  if (n_ch == 0) throw IoError("load_csv: no numeric channels in '" + path + "'");
  out.raw.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_ch));

  std::string prev_ts;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto cells = detail::split_csv_line(rows[r]);
    if (cells.size() != header.size()) {
      throw IoError("load_csv: row " + std::to_string(r + 1) + " has " +
                    std::to_string(cells.size()) + " cells, header has " +
                    std::to_string(header.size()));
    }
    std::size_t cc = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (static_cast<int>(c) == dt_col) {
        if (!prev_ts.empty() && cells[c] < prev_ts) out.nonmonotone_timestamps = true;
        prev_ts = cells[c];
        continue;
      }
      const auto v = detail::parse_double(cells[c]);
      if (!v.has_value()) {
        throw IoError("load_csv: parse failure at row " + std::to_string(r + 1) + ", column '" +
                      header[c] + "'");
      }
      out.raw(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(cc++)) = *v;
    }
  }
  if (out.nonmonotone_timestamps) {
    std::cerr << "[cgfm] warning: non-monotone timestamps in '" << path
              << "', row order preserved\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing and normalization
// ---------------------------------------------------------------------------

enum class Split { Train = 0, Val = 1, Test = 2 };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("split: unknown '" + s + "' (expected train | val | test)");
}

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// @brief Chronologically split, z-scored, stride-1 windowed dataset.
///
/// raw holds the full series in normalized units (z-score fit on the train
/// segment only). Windows are (history C x L, future C x Fh) pairs indexed
/// globally in chronological order: every window lies wholly inside one split
/// segment, so no window spans a split boundary.
struct WindowedDataset {
  Mat raw;  ///< T x C, normalized units
  std::vector<std::string> channel_names;
  int L = 0;
  int Fh = 0;
  Vec mean;  ///< per-channel train mean (raw units)
  Vec stddev;  ///< per-channel train std (raw units, population)
  std::array<std::pair<long, long>, 3> segments{};  ///< [begin, end) row ranges
  struct WindowInfo {
    long start;
    Split split;
  };
  std::vector<WindowInfo> windows;

  int C() const { return static_cast<int>(raw.cols()); }
  long n_windows() const { return static_cast<long>(windows.size()); }

  /// History window as channels x time (C x L).
  Mat history(long w) const {
    const long s = windows.at(w).start;
    return raw.block(s, 0, L, raw.cols()).transpose();
  }

  /// Future window as channels x time (C x Fh).
  Mat future(long w) const {
    const long s = windows.at(w).start + L;
    return raw.block(s, 0, Fh, raw.cols()).transpose();
  }

  Split split_of(long w) const { return windows.at(w).split; }

  std::vector<long> windows_of(Split sp) const {
    std::vector<long> idx;
    for (long w = 0; w < n_windows(); ++w)
      if (windows[w].split == sp) idx.push_back(w);
    return idx;
  }

  /// Maps a channels x steps matrix from normalized back to raw units.
  Mat denormalize(const Mat& m) const {
    Mat out = m;
    for (Eigen::Index r = 0; r < out.rows(); ++r)
      out.row(r) = out.row(r) * stddev[r] + Mat::Constant(1, out.cols(), mean[r]).row(0);
    return out;
  }

  /// Maps a time-major T x C series from normalized back to raw units.
  Mat denormalize_series(const Mat& m) const {
    Mat out = m;
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      out.col(c) = out.col(c) * stddev[c] + Mat::Constant(out.rows(), 1, mean[c]).col(0);
    return out;
  }
};

/// @brief Builds the windowed dataset: chronological contiguous splits, z-score
/// fit on the train segment only, stride-1 windows fully inside each segment.
inline WindowedDataset make_windows(const Mat& raw, int L, int Fh,
                                    const SplitRatios& ratios = SplitRatios{},
                                    std::vector<std::string> channel_names = {}) {
  if (L < 1 || Fh < 1) throw ConfigError("make_windows: L and Fh must be >= 1");
  if (ratios.train <= 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("make_windows: split ratios must be nonnegative and sum to 1");
  }
  const long T = raw.rows();
  const long n_train = static_cast<long>(ratios.train * T);
  const long n_val = static_cast<long>(ratios.val * T);
  WindowedDataset ds;
  ds.raw = raw;
  ds.L = L;
  ds.Fh = Fh;
  ds.channel_names = std::move(channel_names);
  if (ds.channel_names.empty()) {
    for (Eigen::Index c = 0; c < raw.cols(); ++c)
      ds.channel_names.push_back("ch" + std::to_string(c));
  }
  ds.segments[0] = {0, n_train};
  ds.segments[1] = {n_train, n_train + n_val};
  ds.segments[2] = {n_train + n_val, T};

  const long need = L + Fh;
  const double min_ratio = std::min({ratios.train, ratios.val > 0 ? ratios.val : 1.0,
                                     ratios.test > 0 ? ratios.test : 1.0});
  for (int s = 0; s < 3; ++s) {
    const long len = ds.segments[s].second - ds.segments[s].first;
    const double ratio = (s == 0) ? ratios.train : (s == 1 ? ratios.val : ratios.test);
    if (ratio > 0 && len < need) {
      throw SizingError(std::string("make_windows: segment '") +
                        split_name(static_cast<Split>(s)) + "' has " + std::to_string(len) +
                        " rows, windowing needs at least L+Fh=" + std::to_string(need) +
                        " per segment (T >= " +
                        std::to_string(static_cast<long>(std::ceil(need / min_ratio))) +
                        " approximately)");
    }
  }

  // z-score from the train segment only
  ds.mean = Vec::Zero(raw.cols());
  ds.stddev = Vec::Zero(raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const auto seg = raw.col(c).segment(0, n_train);
    const double m = seg.mean();
    const double var = (seg.array() - m).square().sum() / n_train;
    const double sd = std::sqrt(var);
    // relative threshold: a numerically-constant column leaves rounding dust in
    // var that z-scoring would amplify into noise
    if (!(sd > 1e-12 * std::max(1.0, std::abs(m)))) {
      throw ConfigError("make_windows: channel '" + ds.channel_names[c] +
                        "' is constant on the train split");
    }
    ds.mean[c] = m;
    ds.stddev[c] = sd;
    ds.raw.col(c) = (raw.col(c).array() - m) / sd;
  }

  for (int s = 0; s < 3; ++s) {
    const auto [begin, end] = ds.segments[s];
    for (long start = begin; start + need <= end; ++start) {
      ds.windows.push_back({start, static_cast<Split>(s)});
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Auxiliary predictions
// ---------------------------------------------------------------------------

/// @brief Auxiliary forecasts aligned to dataset windows: one flattened C x Fh
/// row per window (row-major: c0f0, ..., c0fF-1, c1f0, ...), normalized units.
struct AuxPredictions {
  enum class Provenance { File, BuiltinLinear };

  Mat rows;  ///< n_windows x (C*Fh)
  Provenance provenance = Provenance::File;

  Mat prediction(long w, int C, int Fh) const {
    return unflatten_rowmajor(rows.row(w).transpose(), C, Fh);
  }
};

/// Wraps predictions as the lookup interface used by coupling and sampling.
inline AuxLookup make_aux_lookup(const AuxPredictions& aux, int C, int Fh) {
  return [&aux, C, Fh](long w) -> std::optional<Mat> {
    if (w < 0 || w >= aux.rows.rows()) return std::nullopt;
    return aux.prediction(w, C, Fh);
  };
}

/// @brief Built-in linear auxiliary: per channel, instance-normalize each
/// history window (subtract window mean, divide by window std + 1e-5), fit one
/// ridge map R^L -> R^Fh on train windows by normal equations, predict every
/// window, and de-instance-normalize. Closed-form, no randomness.
inline AuxPredictions fit_linear_aux(const WindowedDataset& ds, double lambda = 1e-3) {
  const std::vector<long> train = ds.windows_of(Split::Train);
  if (train.empty()) throw SizingError("fit_linear_aux: no train windows");
  const int C = ds.C();
  AuxPredictions aux;
  aux.provenance = AuxPredictions::Provenance::BuiltinLinear;
  aux.rows = Mat::Zero(ds.n_windows(), static_cast<Eigen::Index>(C) * ds.Fh);

  for (int c = 0; c < C; ++c) {
    Mat X(static_cast<Eigen::Index>(train.size()), ds.L);
    Mat Y(static_cast<Eigen::Index>(train.size()), ds.Fh);
    for (std::size_t r = 0; r < train.size(); ++r) {
      const long start = ds.windows[train[r]].start;
      const auto hist = ds.raw.col(c).segment(start, ds.L);
      const auto fut = ds.raw.col(c).segment(start + ds.L, ds.Fh);
      const double m = hist.mean();
      const double sd = std::sqrt((hist.array() - m).square().sum() / ds.L) + 1e-5;
      X.row(r) = ((hist.array() - m) / sd).transpose();
      Y.row(r) = ((fut.array() - m) / sd).transpose();
    }
    const Mat gram = X.transpose() * X + lambda * Mat::Identity(ds.L, ds.L);
    const Mat W = gram.ldlt().solve(X.transpose() * Y);  // L x Fh

    for (long w = 0; w < ds.n_windows(); ++w) {
      const long start = ds.windows[w].start;
      const auto hist = ds.raw.col(c).segment(start, ds.L);
      const double m = hist.mean();
      const double sd = std::sqrt((hist.array() - m).square().sum() / ds.L) + 1e-5;
      const Vec xin = ((hist.array() - m) / sd).matrix();
      const Vec pred = (W.transpose() * xin) * sd + Vec::Constant(ds.Fh, m);
      aux.rows.block(w, static_cast<Eigen::Index>(c) * ds.Fh, 1, ds.Fh) = pred.transpose();
    }
  }
  return aux;
}

// ---------------------------------------------------------------------------
// Aux / forecast CSV round-trip (17 significant digits)
// ---------------------------------------------------------------------------

namespace detail {

inline void write_indexed_csv(const std::string& path, const std::vector<long>& idx,
                              const Mat& values, int C, int Fh) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "window_idx";
  for (int c = 0; c < C; ++c)
    for (int f = 0; f < Fh; ++f) out << ",c" << c << "_f" << f;
  out << "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    out << idx[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << "," << fmt_g17(values(r, c));
    out << "\n";
  }
  if (!out) throw IoError("write failure on '" + path + "'");
}

struct IndexedCsv {
  std::vector<long> window_idx;
  Mat values;
};

/// expected_width < 0 accepts whatever width the header declares.
inline IndexedCsv read_indexed_csv(const std::string& path, int expected_width) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file '" + path + "'");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "window_idx") {
    throw FormatError("'" + path + "': expected leading window_idx column");
  }
  const int width = static_cast<int>(header.size()) - 1;
  if (expected_width >= 0 && width != expected_width) {
    throw ShapeError("'" + path + "': expected " + std::to_string(expected_width) +
                     " value columns, found " + std::to_string(width));
  }
  if (width < 1) throw FormatError("'" + path + "': no value columns");
  IndexedCsv out;
  std::vector<std::vector<double>> data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != width + 1) {
      throw FormatError("'" + path + "': row " + std::to_string(data.size() + 1) +
                        " has wrong cell count");
    }
    out.window_idx.push_back(std::stol(cells[0]));
    std::vector<double> row(width);
    for (int c = 0; c < width; ++c) {
      const auto v = parse_double(cells[c + 1]);
      if (!v.has_value()) {
        throw FormatError("'" + path + "': bad number at row " + std::to_string(data.size() + 1) +
                          ", column '" + header[c + 1] + "'");
      }
      row[c] = *v;
    }
    data.push_back(std::move(row));
  }
  out.values.resize(static_cast<Eigen::Index>(data.size()), width);
  for (std::size_t r = 0; r < data.size(); ++r)
    for (int c = 0; c < width; ++c) out.values(static_cast<Eigen::Index>(r), c) = data[r][c];
  return out;
}

}  // namespace detail

inline void save_aux_csv(const AuxPredictions& aux, const std::string& path, int C, int Fh) {
  std::vector<long> idx(static_cast<std::size_t>(aux.rows.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<long>(i);
  detail::write_indexed_csv(path, idx, aux.rows, C, Fh);
}

inline AuxPredictions load_aux_csv(const std::string& path, const WindowedDataset& ds) {
  const auto csv = detail::read_indexed_csv(path, ds.C() * ds.Fh);
  if (static_cast<long>(csv.window_idx.size()) != ds.n_windows()) {
    throw ShapeError("load_aux_csv: '" + path + "' has " +
                     std::to_string(csv.window_idx.size()) + " rows, dataset has " +
                     std::to_string(ds.n_windows()) + " windows");
  }
  for (std::size_t r = 0; r < csv.window_idx.size(); ++r) {
    if (csv.window_idx[r] != static_cast<long>(r)) {
      throw ShapeError("load_aux_csv: row " + std::to_string(r) + " carries window_idx " +
                       std::to_string(csv.window_idx[r]) + ", expected " + std::to_string(r));
    }
  }
  if (!csv.values.allFinite()) throw FormatError("load_aux_csv: non-finite values in '" + path + "'");
  AuxPredictions aux;
  aux.rows = csv.values;
  aux.provenance = AuxPredictions::Provenance::File;
  return aux;
}

/// Writes a time-major series as CSV (header row, 17 significant digits),
/// the layout load_csv reads back.
inline void save_series_csv(const Mat& series, const std::vector<std::string>& channel_names,
                            const std::string& path) {
  if (static_cast<Eigen::Index>(channel_names.size()) != series.cols()) {
    throw ShapeError("save_series_csv: " + std::to_string(channel_names.size()) +
                     " names for " + std::to_string(series.cols()) + " channels");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (std::size_t c = 0; c < channel_names.size(); ++c) {
    out << (c ? "," : "") << channel_names[c];
  }
  out << "\n";
  for (Eigen::Index r = 0; r < series.rows(); ++r) {
    for (Eigen::Index c = 0; c < series.cols(); ++c) {
      out << (c ? "," : "") << fmt_g17(series(r, c));
    }
    out << "\n";
  }
  if (!out) throw IoError("write failure on '" + path + "'");
}

/// Forecast CSV: one row per window, columns window_idx, c{channel}_f{step}.
struct ForecastRows {
  std::vector<long> window_idx;
  Mat values;  ///< n x (C*Fh), row-major flattened forecasts
};

inline void save_forecast_csv(const ForecastRows& fc, const std::string& path, int C, int Fh) {
  detail::write_indexed_csv(path, fc.window_idx, fc.values, C, Fh);
}

inline ForecastRows load_forecast_csv(const std::string& path, int C, int Fh) {
  const auto csv = detail::read_indexed_csv(path, C * Fh);
  return ForecastRows{csv.window_idx, csv.values};
}

}  // namespace cgfm
