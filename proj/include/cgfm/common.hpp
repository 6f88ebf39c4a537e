#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cgfm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// @brief Raised when matrix shapes disagree with a contract.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised for invalid configuration values (bad scheduler degree, ratios, ...).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised when a scalar argument leaves its documented domain.
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised on malformed or truncated serialized payloads.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised when a serialized payload has an unsupported version tag.
class VersionError : public std::runtime_error {
 public:
  explicit VersionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised when a numeric computation degenerates (underflow, non-finite state).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised when an aligned resource (auxiliary prediction, window) is missing.
class LookupError : public std::runtime_error {
 public:
  explicit LookupError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised when a dataset is too small for the requested windowing.
class SizingError : public std::runtime_error {
 public:
  explicit SizingError(const std::string& msg) : std::runtime_error(msg) {}
};

/// @brief Raised on file I/O and parse failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shapes " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// Flattens a C x F matrix row-major: c0f0, c0f1, ..., c1f0, ...
inline Vec flatten_rowmajor(const Mat& m) {
  Vec v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[k++] = m(r, c);
  return v;
}

/// Inverse of flatten_rowmajor for a known shape.
inline Mat unflatten_rowmajor(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) {
    throw ShapeError("unflatten_rowmajor: length " + std::to_string(v.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Mat m(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[k++];
  return m;
}

/// Formats a double with 17 significant digits (lossless round-trip).
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace cgfm
