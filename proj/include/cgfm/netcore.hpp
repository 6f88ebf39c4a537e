#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "cgfm/common.hpp"
#include "cgfm/rng.hpp"

namespace cgfm {

/// Fourier time features: [t, sin(2 pi k t), cos(2 pi k t) for k = 1..K].
inline Vec time_embed(double t, int K) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError("time_embed: t must lie in [0,1], got t=" + std::to_string(t));
  }
  constexpr double two_pi = 6.283185307179586;
  Vec v(2 * K + 1);
  v[0] = t;
  for (int k = 1; k <= K; ++k) {
    v[2 * k - 1] = std::sin(two_pi * k * t);
    v[2 * k] = std::cos(two_pi * k * t);
  }
  return v;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double silu_deriv(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

/// @brief The history-conditioned velocity/target network u_t(x | h).
///
/// A fully connected net over concat[flatten(xt), flatten(h), time_embed(t)]
/// with SiLU hidden activations and a linear output reshaped to C x Fh.
/// Flattening is row-major (channel-major): c0f0, c0f1, ..., c1f0, ...
/// All arithmetic is 64-bit. hidden may be empty (a single linear layer).
struct VelocityNet {
  int C = 1;
  int L = 1;
  int Fh = 1;
  int K = 8;                 ///< Fourier frequencies; embed dim 2K+1
  std::vector<int> hidden;   ///< hidden layer widths
  std::vector<Mat> W;        ///< layer weights, W[i] is (out_i x in_i)
  std::vector<Vec> b;        ///< layer biases

  int input_dim() const { return C * Fh + C * L + 2 * K + 1; }
  int output_dim() const { return C * Fh; }
  int num_layers() const { return static_cast<int>(W.size()); }

  long param_count() const {
    long n = 0;
    for (std::size_t i = 0; i < W.size(); ++i) n += W[i].size() + b[i].size();
    return n;
  }
};

/// Fresh network with weights ~ Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) and
/// zero biases.
inline VelocityNet init_net(int C, int L, int Fh, const std::vector<int>& hidden, int K,
                            RngStream& rng) {
  if (C < 1 || L < 1 || Fh < 1 || K < 0) throw ConfigError("init_net: bad dimensions");
  for (int w : hidden)
    if (w < 1) throw ConfigError("init_net: hidden widths must be >= 1");
  VelocityNet net;
  net.C = C;
  net.L = L;
  net.Fh = Fh;
  net.K = K;
  net.hidden = hidden;
  std::vector<int> dims;
  dims.push_back(net.input_dim());
  for (int w : hidden) dims.push_back(w);
  dims.push_back(net.output_dim());
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int in = dims[i];
    const int out = dims[i + 1];
    const double r = std::sqrt(6.0 / in);
    Mat w(out, in);
    for (Eigen::Index cc = 0; cc < w.cols(); ++cc)
      for (Eigen::Index rr = 0; rr < w.rows(); ++rr) w(rr, cc) = (2.0 * rng.uniform01() - 1.0) * r;
    net.W.push_back(std::move(w));
    net.b.push_back(Vec::Zero(out));
  }
  return net;
}

/// Intermediates of one batched forward pass, kept for the backward pass.
struct ForwardCache {
  Mat X;               ///< input matrix, in_dim x B
  std::vector<Mat> Z;  ///< pre-activations per hidden layer
  std::vector<Mat> A;  ///< post-activations per hidden layer
  Mat out;             ///< out_dim x B
};

/// Parameter gradients, shaped like the network.
struct Grads {
  std::vector<Mat> gW;
  std::vector<Vec> gb;
};

inline Grads zero_grads(const VelocityNet& net) {
  Grads g;
  for (std::size_t i = 0; i < net.W.size(); ++i) {
    g.gW.push_back(Mat::Zero(net.W[i].rows(), net.W[i].cols()));
    g.gb.push_back(Vec::Zero(net.b[i].size()));
  }
  return g;
}

/// Batched forward over an in_dim x B input matrix (one column per sample).
inline void forward_cached(const VelocityNet& net, const Mat& X, ForwardCache& cache) {
  if (X.rows() != net.input_dim()) {
    throw ShapeError("forward: input dim " + std::to_string(X.rows()) + " != expected " +
                     std::to_string(net.input_dim()));
  }
  const int n_hidden = net.num_layers() - 1;
  cache.X = X;
  cache.Z.assign(n_hidden, Mat());
  cache.A.assign(n_hidden, Mat());
  const Mat* cur = &cache.X;
  for (int i = 0; i < n_hidden; ++i) {
    cache.Z[i] = (net.W[i] * (*cur)).colwise() + net.b[i];
    cache.A[i] = cache.Z[i].unaryExpr([](double z) { return silu(z); });
    cur = &cache.A[i];
  }
  cache.out = (net.W.back() * (*cur)).colwise() + net.b.back();
}

/// Reverse-mode gradients of sum_j <out.col(j), G.col(j)> w.r.t. every parameter.
inline Grads backward_cached(const VelocityNet& net, const ForwardCache& cache, const Mat& G) {
  if (G.rows() != net.output_dim() || G.cols() != cache.out.cols()) {
    throw ShapeError("backward: upstream shape mismatch");
  }
  const int n_hidden = net.num_layers() - 1;
  Grads grads;
  grads.gW.resize(net.num_layers());
  grads.gb.resize(net.num_layers());
  Mat delta = G;
  for (int i = net.num_layers() - 1; i >= 0; --i) {
    const Mat& below = (i == 0) ? cache.X : cache.A[i - 1];
    grads.gW[i] = delta * below.transpose();
    grads.gb[i] = delta.rowwise().sum();
    if (i > 0) {
      Mat da = cache.Z[i - 1].unaryExpr([](double z) { return silu_deriv(z); });
      delta = (net.W[i].transpose() * delta).cwiseProduct(da);
    }
  }
  (void)n_hidden;
  return grads;
}

/// Assembles the per-sample input column concat[flatten(xt), flatten(h), time_embed(t)].
inline Vec assemble_input(const VelocityNet& net, double t, const Mat& xt, const Mat& h) {
  if (xt.rows() != net.C || xt.cols() != net.Fh) {
    throw ShapeError("forward: xt shape " + std::to_string(xt.rows()) + "x" +
                     std::to_string(xt.cols()) + " != " + std::to_string(net.C) + "x" +
                     std::to_string(net.Fh));
  }
  if (h.rows() != net.C || h.cols() != net.L) {
    throw ShapeError("forward: h shape " + std::to_string(h.rows()) + "x" +
                     std::to_string(h.cols()) + " != " + std::to_string(net.C) + "x" +
                     std::to_string(net.L));
  }
  if (!all_finite(xt) || !all_finite(h)) throw NumericError("forward: non-finite input");
  Vec in(net.input_dim());
  in.head(net.C * net.Fh) = flatten_rowmajor(xt);
  in.segment(net.C * net.Fh, net.C * net.L) = flatten_rowmajor(h);
  in.tail(2 * net.K + 1) = time_embed(t, net.K);
  return in;
}

/// Single-sample forward: u_t(xt | h) as a C x Fh matrix.
inline Mat forward(const VelocityNet& net, double t, const Mat& xt, const Mat& h) {
  ForwardCache cache;
  forward_cached(net, assemble_input(net, t, xt, h), cache);
  return unflatten_rowmajor(cache.out.col(0), net.C, net.Fh);
}

/// Single-sample backward: gradients of <forward(net,t,xt,h), upstream>.
inline Grads backward(const VelocityNet& net, double t, const Mat& xt, const Mat& h,
                      const Mat& upstream) {
  if (upstream.rows() != net.C || upstream.cols() != net.Fh) {
    throw ShapeError("backward: upstream shape mismatch");
  }
  ForwardCache cache;
  forward_cached(net, assemble_input(net, t, xt, h), cache);
  Mat G(net.output_dim(), 1);
  G.col(0) = flatten_rowmajor(upstream);
  return backward_cached(net, cache, G);
}

// ---------------------------------------------------------------------------
// Flat parameter views (used by the finite-difference and enumeration oracles).
// Order: per layer, W row-major then b.
// ---------------------------------------------------------------------------

inline Vec get_flat_params(const VelocityNet& net) {
  Vec v(net.param_count());
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < net.W.size(); ++i) {
    for (Eigen::Index r = 0; r < net.W[i].rows(); ++r)
      for (Eigen::Index c = 0; c < net.W[i].cols(); ++c) v[k++] = net.W[i](r, c);
    for (Eigen::Index r = 0; r < net.b[i].size(); ++r) v[k++] = net.b[i][r];
  }
  return v;
}

inline void set_flat_params(VelocityNet& net, const Vec& v) {
  if (v.size() != net.param_count()) throw ShapeError("set_flat_params: length mismatch");
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < net.W.size(); ++i) {
    for (Eigen::Index r = 0; r < net.W[i].rows(); ++r)
      for (Eigen::Index c = 0; c < net.W[i].cols(); ++c) net.W[i](r, c) = v[k++];
    for (Eigen::Index r = 0; r < net.b[i].size(); ++r) net.b[i][r] = v[k++];
  }
}

inline Vec flatten_grads(const VelocityNet& net, const Grads& g) {
  Vec v(net.param_count());
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < g.gW.size(); ++i) {
    for (Eigen::Index r = 0; r < g.gW[i].rows(); ++r)
      for (Eigen::Index c = 0; c < g.gW[i].cols(); ++c) v[k++] = g.gW[i](r, c);
    for (Eigen::Index r = 0; r < g.gb[i].size(); ++r) v[k++] = g.gb[i][r];
  }
  return v;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// @brief Adam optimizer state with bias correction.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Mat> mW, vW;
  std::vector<Vec> mb, vb;

  static AdamState make(const VelocityNet& net, double lr = 1e-3) {
    AdamState st;
    st.lr = lr;
    for (std::size_t i = 0; i < net.W.size(); ++i) {
      st.mW.push_back(Mat::Zero(net.W[i].rows(), net.W[i].cols()));
      st.vW.push_back(Mat::Zero(net.W[i].rows(), net.W[i].cols()));
      st.mb.push_back(Vec::Zero(net.b[i].size()));
      st.vb.push_back(Vec::Zero(net.b[i].size()));
    }
    return st;
  }
};

/// One Adam step. Rejects the whole update (no state mutated) if any gradient
/// entry is non-finite, reporting the offending parameter.
inline void adam_update(AdamState& st, VelocityNet& net, const Grads& g) {
  for (std::size_t i = 0; i < g.gW.size(); ++i) {
    if (!g.gW[i].allFinite()) {
      throw NumericError("adam_update: non-finite gradient for layer" + std::to_string(i) +
                         ".weight; update rejected");
    }
    if (!g.gb[i].allFinite()) {
      throw NumericError("adam_update: non-finite gradient for layer" + std::to_string(i) +
                         ".bias; update rejected");
    }
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < net.W.size(); ++i) {
    st.mW[i] = st.beta1 * st.mW[i] + (1.0 - st.beta1) * g.gW[i];
    st.vW[i] = st.beta2 * st.vW[i] + (1.0 - st.beta2) * g.gW[i].cwiseProduct(g.gW[i]);
    net.W[i] -= st.lr * (st.mW[i] / bc1)
                    .cwiseQuotient(((st.vW[i] / bc2).cwiseSqrt().array() + st.eps).matrix());
    st.mb[i] = st.beta1 * st.mb[i] + (1.0 - st.beta1) * g.gb[i];
    st.vb[i] = st.beta2 * st.vb[i] + (1.0 - st.beta2) * g.gb[i].cwiseProduct(g.gb[i]);
    net.b[i] -= st.lr * (st.mb[i] / bc1)
                    .cwiseQuotient(((st.vb[i] / bc2).cwiseSqrt().array() + st.eps).matrix());
  }
}

// ---------------------------------------------------------------------------
// Serialization
//
// Binary, little-endian, versioned:
//   magic "CGFMPARM" | u32 version=1 | u32 activation (0 = SiLU)
//   | u32 K | u32 C | u32 L | u32 Fh | u32 n_layers
//   | per layer: u32 rows, u32 cols, rows*cols f64 W (row-major), rows f64 b
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

inline void put_f64(std::string& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

struct ByteReader {
  const std::string& data;
  std::size_t pos = 0;

  std::uint32_t u32() {
    if (pos + 4 > data.size()) throw FormatError("params: truncated stream");
    std::uint32_t v;
    std::memcpy(&v, data.data() + pos, 4);
    pos += 4;
    return v;
  }
  double f64() {
    if (pos + 8 > data.size()) throw FormatError("params: truncated stream");
    double v;
    std::memcpy(&v, data.data() + pos, 8);
    pos += 8;
    return v;
  }
};

inline constexpr char kParamsMagic[8] = {'C', 'G', 'F', 'M', 'P', 'A', 'R', 'M'};
inline constexpr std::uint32_t kParamsVersion = 1;

}  // namespace detail

inline std::string save_params(const VelocityNet& net) {
  std::string out;
  out.append(detail::kParamsMagic, 8);
  detail::put_u32(out, detail::kParamsVersion);
  detail::put_u32(out, 0);  // activation: SiLU
  detail::put_u32(out, static_cast<std::uint32_t>(net.K));
  detail::put_u32(out, static_cast<std::uint32_t>(net.C));
  detail::put_u32(out, static_cast<std::uint32_t>(net.L));
  detail::put_u32(out, static_cast<std::uint32_t>(net.Fh));
  detail::put_u32(out, static_cast<std::uint32_t>(net.num_layers()));
  for (int i = 0; i < net.num_layers(); ++i) {
    detail::put_u32(out, static_cast<std::uint32_t>(net.W[i].rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(net.W[i].cols()));
    for (Eigen::Index r = 0; r < net.W[i].rows(); ++r)
      for (Eigen::Index c = 0; c < net.W[i].cols(); ++c) detail::put_f64(out, net.W[i](r, c));
    for (Eigen::Index r = 0; r < net.b[i].size(); ++r) detail::put_f64(out, net.b[i][r]);
  }
  return out;
}

inline VelocityNet load_params(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), detail::kParamsMagic, 8) != 0) {
    throw FormatError("params: bad magic header");
  }
  detail::ByteReader rd{bytes, 8};
  const std::uint32_t version = rd.u32();
  if (version != detail::kParamsVersion) {
    throw VersionError("params: unsupported version " + std::to_string(version) + " (expected " +
                       std::to_string(detail::kParamsVersion) + ")");
  }
  const std::uint32_t act = rd.u32();
  if (act != 0) throw FormatError("params: unknown activation tag " + std::to_string(act));
  VelocityNet net;
  net.K = static_cast<int>(rd.u32());
  net.C = static_cast<int>(rd.u32());
  net.L = static_cast<int>(rd.u32());
  net.Fh = static_cast<int>(rd.u32());
  const std::uint32_t n_layers = rd.u32();
  if (n_layers < 1 || n_layers > 64) throw FormatError("params: implausible layer count");
  int expect_in = net.input_dim();
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto rows = static_cast<Eigen::Index>(rd.u32());
    const auto cols = static_cast<Eigen::Index>(rd.u32());
    if (cols != expect_in) throw FormatError("params: layer dimension chain broken");
    Mat w(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = rd.f64();
    Vec bias(rows);
    for (Eigen::Index r = 0; r < rows; ++r) bias[r] = rd.f64();
    if (i + 1 < n_layers) net.hidden.push_back(static_cast<int>(rows));
    net.W.push_back(std::move(w));
    net.b.push_back(std::move(bias));
    expect_in = static_cast<int>(rows);
  }
  if (expect_in != net.output_dim()) throw FormatError("params: output dimension mismatch");
  if (rd.pos != bytes.size()) throw FormatError("params: trailing bytes");
  return net;
}

}  // namespace cgfm
