#pragma once

#include <array>
#include <chrono>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cgfm/common.hpp"
#include "cgfm/dataio.hpp"
#include "cgfm/netcore.hpp"
#include "cgfm/pathkit.hpp"
#include "cgfm/rng.hpp"
#include "cgfm/scheduler.hpp"

namespace cgfm {

// ---------------------------------------------------------------------------
// Conditional matching loss
// ---------------------------------------------------------------------------

namespace detail {

/// Stacks a coupling batch into network input columns X and target columns G.
inline void assemble_batch(const VelocityNet& net, const std::vector<CouplingSample>& batch,
                           const Scheduler& s, PredictionTarget target, Mat& X, Mat& G) {
  if (batch.empty()) throw SizingError("cgm_loss: empty batch");
  X.resize(net.input_dim(), static_cast<Eigen::Index>(batch.size()));
  G.resize(net.output_dim(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const CouplingSample& c = batch[j];
    X.col(static_cast<Eigen::Index>(j)) = assemble_input(net, c.t, c.xt, c.h);
    G.col(static_cast<Eigen::Index>(j)) = flatten_rowmajor(target_g(target, s, c.t, c.x0, c.x1));
  }
}

}  // namespace detail

struct LossGrads {
  double loss = 0.0;
  Grads grads;
};

/// @brief Mean squared error between the network output and the prediction
/// target g_t, averaged over every entry of the batch (batch * C * Fh values),
/// together with exact parameter gradients.
inline LossGrads cgm_loss(const VelocityNet& net, const std::vector<CouplingSample>& batch,
                          const Scheduler& s, PredictionTarget target) {
  Mat X, G;
  detail::assemble_batch(net, batch, s, target, X, G);
  ForwardCache cache;
  forward_cached(net, X, cache);
  const Mat diff = cache.out - G;
  const double denom = static_cast<double>(diff.size());
  LossGrads out;
  out.loss = diff.array().square().sum() / denom;
  out.grads = backward_cached(net, cache, Mat(2.0 * diff / denom));
  return out;
}

/// Loss-only variant for validation passes.
inline double cgm_loss_value(const VelocityNet& net, const std::vector<CouplingSample>& batch,
                             const Scheduler& s, PredictionTarget target) {
  Mat X, G;
  detail::assemble_batch(net, batch, s, target, X, G);
  ForwardCache cache;
  forward_cached(net, X, cache);
  return (cache.out - G).array().square().sum() / static_cast<double>((cache.out - G).size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  Scheduler scheduler = Scheduler::condot();
  PredictionTarget target = PredictionTarget::X1Pred;
  SourceMode source = SourceMode::noise();
  int epochs = 10;
  long max_steps = 0;  ///< 0 = no step cap; otherwise stop after this many updates
  int batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  int val_every = 200;  ///< validation cadence in steps; 0 disables validation
  int patience = 10;  ///< stop after this many non-improving validations; 0 disables
  long val_max_windows = 200;  ///< evenly spaced cap on validation windows
  std::vector<int> hidden = {256, 256};
  int embed_k = 8;
};

struct TrainLogRow {
  long step = 0;
  double train_loss = 0.0;
  bool has_val = false;
  double val_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  VelocityNet net;  ///< best-validation parameters (last-step when never validated)
  std::vector<TrainLogRow> log;
  long steps = 0;
  double best_val = std::numeric_limits<double>::infinity();
  long best_step = -1;
  bool stopped_early = false;
  std::array<long, 10> t_hist{};  ///< decile counts of the t values drawn
};

namespace detail {

inline std::vector<long> evenly_spaced(const std::vector<long>& idx, long cap) {
  const long n = static_cast<long>(idx.size());
  if (cap <= 0 || n <= cap) return idx;
  std::vector<long> out;
  out.reserve(static_cast<std::size_t>(cap));
  for (long i = 0; i < cap; ++i) out.push_back(idx[static_cast<std::size_t>((i * n) / cap)]);
  return out;
}

}  // namespace detail

/// @brief Trains a velocity network on the dataset's train windows.
///
/// Each epoch shuffles the train windows and walks them in batches (partial
/// trailing batches are dropped). Every sample draws a fresh coupling and an
/// independent t ~ U(0,1). Validation runs every val_every steps on a fixed
/// set of couplings (drawn once) crossed with the t grid {0.1, ..., 0.9}; the
/// best-validation parameters are kept and restored at the end. Deterministic
/// for a fixed config apart from the wall_ms log column.
inline TrainResult train(const WindowedDataset& ds, const AuxPredictions* aux,
                         const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.epochs < 1 && cfg.max_steps <= 0) {
    throw ConfigError("train: need epochs >= 1 or a positive max_steps");
  }
  if (cfg.source.mode == SourceMode::Mode::AuxOutput && aux == nullptr) {
    throw ConfigError("train: source mode aux-output needs auxiliary predictions");
  }
  const std::vector<long> train_windows = ds.windows_of(Split::Train);
  if (static_cast<long>(train_windows.size()) < cfg.batch_size) {
    throw SizingError("train: " + std::to_string(train_windows.size()) +
                      " train windows cannot fill a batch of " + std::to_string(cfg.batch_size));
  }
  const AuxLookup lookup = aux ? make_aux_lookup(*aux, ds.C(), ds.Fh) : AuxLookup{};

  RngStream init_rng(derive_seed(cfg.seed, "net.init"));
  RngStream loop_rng(derive_seed(cfg.seed, "train.loop"));
  RngStream val_rng(derive_seed(cfg.seed, "train.val"));

  TrainResult res;
  res.net = init_net(ds.C(), ds.L, ds.Fh, cfg.hidden, cfg.embed_k, init_rng);
  AdamState adam = AdamState::make(res.net, cfg.lr);

  // Fixed validation couplings: evenly spaced val windows, one coupling draw
  // each, crossed with a fixed t grid. Reused across validations so the val
  // curve is comparable step to step.
  std::vector<CouplingSample> val_set;
  if (cfg.val_every > 0) {
    const std::vector<long> val_windows =
        detail::evenly_spaced(ds.windows_of(Split::Val), cfg.val_max_windows);
    for (long w : val_windows) {
      CouplingSample base = draw_coupling(ds.history(w), ds.future(w), w, cfg.source, lookup,
                                          val_rng);
      for (int k = 1; k <= 9; ++k) {
        const double t = 0.1 * k;
        val_set.push_back(make_coupling_sample(cfg.scheduler, t, base.h, base.x0, base.x1));
      }
    }
  }

  std::vector<VelocityNet> best;  // 0 or 1 element; avoids a default-constructible requirement
  int bad_validations = 0;
  bool stop = false;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<long> order = train_windows;
  std::vector<CouplingSample> batch;
  batch.reserve(static_cast<std::size_t>(cfg.batch_size));

  for (int epoch = 0; !stop && (cfg.epochs < 1 || epoch < cfg.epochs); ++epoch) {
    loop_rng.shuffle(order);
    const long n_batches = static_cast<long>(order.size()) / cfg.batch_size;
    for (long bi = 0; bi < n_batches && !stop; ++bi) {
      batch.clear();
      for (int j = 0; j < cfg.batch_size; ++j) {
        const long w = order[static_cast<std::size_t>(bi * cfg.batch_size + j)];
        CouplingSample c =
            draw_coupling(ds.history(w), ds.future(w), w, cfg.source, lookup, loop_rng);
        const double t = loop_rng.uniform01();
        res.t_hist[std::min<std::size_t>(9, static_cast<std::size_t>(t * 10.0))]++;
        batch.push_back(make_coupling_sample(cfg.scheduler, t, std::move(c.h), std::move(c.x0),
                                             std::move(c.x1)));
      }

      LossGrads lg = cgm_loss(res.net, batch, cfg.scheduler, cfg.target);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("training aborted at step " + std::to_string(res.steps + 1) +
                           ": non-finite loss");
      }
      try {
        adam_update(adam, res.net, lg.grads);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(res.steps + 1) + ": " +
                           e.what());
      }
      ++res.steps;

      TrainLogRow row;
      row.step = res.steps;
      row.train_loss = lg.loss;
      row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();

      if (cfg.val_every > 0 && res.steps % cfg.val_every == 0) {
        const double vl = cgm_loss_value(res.net, val_set, cfg.scheduler, cfg.target);
        row.has_val = true;
        row.val_loss = vl;
        if (vl < res.best_val) {
          res.best_val = vl;
          res.best_step = res.steps;
          best.assign(1, res.net);
          bad_validations = 0;
        } else if (cfg.patience > 0 && ++bad_validations >= cfg.patience) {
          res.stopped_early = true;
          stop = true;
        }
      }
      res.log.push_back(row);
      if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) stop = true;
    }
  }

  if (!best.empty()) res.net = std::move(best.front());
  return res;
}

/// Writes the per-step log as CSV (step, train_loss, val_loss, wall_ms).
/// val_loss is empty on steps without a validation pass. wall_ms is wall-clock
/// and is the one column that varies between otherwise identical runs.
inline void write_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "step,train_loss,val_loss,wall_ms\n";
  for (const auto& row : log) {
    out << row.step << "," << fmt_g17(row.train_loss) << ",";
    if (row.has_val) out << fmt_g17(row.val_loss);
    out << "," << fmt_g17(row.wall_ms) << "\n";
  }
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace cgfm
