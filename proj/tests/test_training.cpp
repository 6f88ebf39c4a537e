#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cgfm/evalkit.hpp"
#include "cgfm/oracle.hpp"
#include "cgfm/training.hpp"

using namespace cgfm;

namespace {

std::string tmp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "cgfm_training_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

/// Dataset whose every window is the same constant segment: history = future =
/// `level` in normalized units. n_copies duplicate windows let batches fill.
WindowedDataset point_mass_ds(double level, int L, int Fh, int n_copies,
                              Split split = Split::Train) {
  WindowedDataset ds;
  ds.L = L;
  ds.Fh = Fh;
  ds.raw = Mat::Constant(L + Fh, 1, level);
  ds.channel_names = {"ch0"};
  ds.mean = Vec::Zero(1);
  ds.stddev = Vec::Ones(1);
  ds.segments[0] = {0, L + Fh};
  for (int i = 0; i < n_copies; ++i) ds.windows.push_back({0, split});
  return ds;
}

WindowedDataset sin_ds(long T, int L, int Fh, std::uint64_t seed) {
  return make_windows(synth_sinmix(T, 1, seed, 0.0), L, Fh);
}

}  // namespace

TEST_CASE("cgm_loss: zero network against a constant target") {
  RngStream rng(1);
  VelocityNet net = init_net(1, 2, 1, {4}, 0, rng);
  set_flat_params(net, Vec::Zero(net.param_count()));

  const Mat h = Mat::Zero(1, 2);
  const Mat x0 = Mat::Zero(1, 1);
  const Mat x1 = Mat::Constant(1, 1, 2.0);
  const auto batch = {make_coupling_sample(Scheduler::condot(), 0.5, h, x0, x1)};

  // x1-prediction: target is x1 itself, prediction is 0, squared error is 4
  const LossGrads lg = cgm_loss(net, batch, Scheduler::condot(), PredictionTarget::X1Pred);
  CHECK(lg.loss == 4.0);

  // a zero target gives an exact zero minimum
  const auto batch0 = {make_coupling_sample(Scheduler::condot(), 0.5, h, x0, Mat::Zero(1, 1))};
  CHECK(cgm_loss(net, batch0, Scheduler::condot(), PredictionTarget::X1Pred).loss == 0.0);
  CHECK(cgm_loss_value(net, batch0, Scheduler::condot(), PredictionTarget::X1Pred) == 0.0);

  CHECK_THROWS_AS(cgm_loss(net, {}, Scheduler::condot(), PredictionTarget::X1Pred), SizingError);
}

TEST_CASE("cgm_loss: gradients match finite differences over a mixed batch") {
  RngStream rng(2);
  VelocityNet net = init_net(2, 3, 2, {10}, 1, rng);
  std::vector<CouplingSample> batch;
  for (int j = 0; j < 3; ++j) {
    Mat h(2, 3), x0(2, 2), x1(2, 2);
    for (int i = 0; i < 6; ++i) h(i / 3, i % 3) = rng.normal();
    for (int i = 0; i < 4; ++i) x0(i / 2, i % 2) = rng.normal();
    for (int i = 0; i < 4; ++i) x1(i / 2, i % 2) = rng.normal();
    batch.push_back(
        make_coupling_sample(Scheduler::cosine(), 0.2 + 0.3 * j, h, x0, x1));
  }
  for (PredictionTarget target :
       {PredictionTarget::Ut, PredictionTarget::X1Pred, PredictionTarget::X0Pred}) {
    const LossGrads lg = cgm_loss(net, batch, Scheduler::cosine(), target);
    const Vec flat = flatten_grads(net, lg.grads);

    VelocityNet probe = net;
    const auto loss = [&](const Vec& p) {
      set_flat_params(probe, p);
      return cgm_loss_value(probe, batch, Scheduler::cosine(), target);
    };
    const Vec fd = finite_diff_grad(loss, get_flat_params(net), 1e-6);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < fd.size(); ++i) {
      worst = std::max(worst, std::abs(flat[i] - fd[i]) / std::max(std::abs(fd[i]), 1e-4));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("train: fits a point-mass target") {
  const WindowedDataset ds = point_mass_ds(3.0, 4, 1, 80);
  TrainConfig cfg;
  cfg.hidden = {32, 32};
  cfg.embed_k = 2;
  cfg.batch_size = 16;
  cfg.epochs = 0;
  cfg.max_steps = 2000;
  cfg.val_every = 0;
  cfg.seed = 5;
  const TrainResult res = train(ds, nullptr, cfg);
  CHECK(res.steps == 2000);
  CHECK_FALSE(res.stopped_early);
  CHECK(res.log.size() == 2000);

  // the x1-prediction head should answer ~3 along the whole path
  RngStream rng(6);
  const Mat h = Mat::Constant(1, 4, 3.0);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const double t = rng.uniform01();
    Mat x0(1, 1);
    x0(0, 0) = rng.normal();
    const Mat xt = eval(Scheduler::condot(), t).alpha * Mat::Constant(1, 1, 3.0) +
                   eval(Scheduler::condot(), t).beta * x0;
    worst = std::max(worst, std::abs(forward(res.net, t, xt, h)(0, 0) - 3.0));
  }
  CHECK(worst < 0.1);

  // the loss curve actually came down
  CHECK(res.log.front().train_loss > 10.0 * res.log.back().train_loss);
}

TEST_CASE("train: bit-identical reruns for a fixed config") {
  const WindowedDataset ds = sin_ds(400, 12, 3, 8);
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.embed_k = 2;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.val_every = 20;
  cfg.seed = 9;
  const TrainResult a = train(ds, nullptr, cfg);
  const TrainResult b = train(ds, nullptr, cfg);
  CHECK(save_params(a.net) == save_params(b.net));
  CHECK(a.steps == b.steps);
  CHECK(a.best_step == b.best_step);
  CHECK(a.t_hist == b.t_hist);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
  }
}

TEST_CASE("train: validation passes do not perturb the optimization stream") {
  const WindowedDataset ds = sin_ds(400, 12, 3, 8);
  TrainConfig base;
  base.hidden = {16};
  base.embed_k = 2;
  base.batch_size = 8;
  base.epochs = 0;
  base.max_steps = 60;
  base.seed = 10;

  TrainConfig with_val = base;
  with_val.val_every = 10;
  with_val.patience = 0;  // never early-stop, so the step counts match
  TrainConfig no_val = base;
  no_val.val_every = 0;

  const TrainResult v = train(ds, nullptr, with_val);
  const TrainResult n = train(ds, nullptr, no_val);
  REQUIRE(v.steps == n.steps);
  for (std::size_t i = 0; i < v.log.size(); ++i) {
    CHECK(v.log[i].train_loss == n.log[i].train_loss);
  }
  CHECK(v.best_step > 0);
  CHECK(n.best_step == -1);
}

TEST_CASE("train: drawn times cover the deciles uniformly") {
  const WindowedDataset ds = point_mass_ds(1.0, 4, 1, 80);
  TrainConfig cfg;
  cfg.hidden = {8};
  cfg.embed_k = 0;
  cfg.batch_size = 16;
  cfg.epochs = 0;
  cfg.max_steps = 100;  // 1600 t draws
  cfg.val_every = 0;
  cfg.seed = 11;
  const TrainResult res = train(ds, nullptr, cfg);
  long total = 0;
  for (long c : res.t_hist) total += c;
  CHECK(total == 1600);
  for (long c : res.t_hist) {
    CHECK(std::abs(static_cast<double>(c) / 1600.0 - 0.1) < 0.02);
  }
}

TEST_CASE("train: early stopping restores the best checkpoint") {
  Mat raw = synth_sinmix(400, 1, 8, 0.0);
  const WindowedDataset ds = make_windows(raw, 12, 3);
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.embed_k = 2;
  cfg.batch_size = 8;
  cfg.epochs = 50;
  cfg.val_every = 1;
  cfg.patience = 1;
  cfg.lr = 0.05;  // coarse steps make the val curve rough on purpose
  cfg.seed = 12;
  const TrainResult res = train(ds, nullptr, cfg);
  CHECK(res.stopped_early);
  CHECK(res.best_step >= 1);
  CHECK(res.steps == res.best_step + 1);  // exactly one non-improving validation

  // the returned parameters are the checkpoint, not the last step: a rerun
  // capped at best_step lands on identical parameters
  TrainConfig replay = cfg;
  replay.epochs = 0;
  replay.max_steps = res.best_step;
  replay.patience = 0;
  const TrainResult best_only = train(ds, nullptr, replay);
  CHECK(save_params(res.net) == save_params(best_only.net));
  CHECK(res.best_val == best_only.best_val);
}

TEST_CASE("train: non-finite losses abort with the step number") {
  const WindowedDataset ds = point_mass_ds(1e200, 4, 1, 80);
  TrainConfig cfg;
  cfg.hidden = {8};
  cfg.embed_k = 0;
  cfg.batch_size = 16;
  cfg.epochs = 1;
  cfg.val_every = 0;
  CHECK_THROWS_WITH(train(ds, nullptr, cfg),
                    Catch::Matchers::ContainsSubstring("aborted at step 1"));
}

TEST_CASE("train: configuration and sizing validation") {
  const WindowedDataset ds = point_mass_ds(1.0, 4, 1, 10);
  TrainConfig cfg;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(ds, nullptr, cfg), ConfigError);

  cfg = TrainConfig{};
  cfg.epochs = 0;
  cfg.max_steps = 0;
  CHECK_THROWS_AS(train(ds, nullptr, cfg), ConfigError);

  cfg = TrainConfig{};
  cfg.source = SourceMode::aux_output(0.1);
  CHECK_THROWS_AS(train(ds, nullptr, cfg), ConfigError);

  cfg = TrainConfig{};
  cfg.batch_size = 64;  // only 10 train windows available
  CHECK_THROWS_AS(train(ds, nullptr, cfg), SizingError);
}

TEST_CASE("train: aux-output source consumes aligned auxiliary forecasts") {
  const WindowedDataset ds = sin_ds(400, 12, 3, 8);
  const AuxPredictions aux = fit_linear_aux(ds);
  TrainConfig cfg;
  cfg.hidden = {16};
  cfg.embed_k = 2;
  cfg.batch_size = 8;
  cfg.epochs = 0;
  cfg.max_steps = 30;
  cfg.val_every = 10;
  cfg.source = SourceMode::aux_output(0.1);
  cfg.seed = 13;
  const TrainResult res = train(ds, &aux, cfg);
  CHECK(res.steps == 30);
  for (const auto& row : res.log) CHECK(std::isfinite(row.train_loss));
}

TEST_CASE("write_train_log: validation column is sparse") {
  std::vector<TrainLogRow> log(3);
  log[0] = {1, 0.5, false, 0.0, 1.25};
  log[1] = {2, 0.25, true, 0.375, 2.5};
  log[2] = {3, 0.125, false, 0.0, 3.75};
  const std::string p = tmp_path("train_log.csv");
  write_train_log(log, p);

  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,train_loss,val_loss,wall_ms");
  std::getline(in, line);
  CHECK(line == "1,0.5,,1.25");
  std::getline(in, line);
  CHECK(line == "2,0.25,0.375,2.5");
  std::getline(in, line);
  CHECK(line == "3,0.125,,3.75");
}
