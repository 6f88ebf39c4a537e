#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>

#include "cgfm/cgfm.hpp"

using namespace cgfm;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "cgfm_cli_tests";

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

int run_cmd(const std::string& args, std::string* output = nullptr,
            const std::string& env_prefix = "") {
  static std::mutex mu;
  const std::lock_guard<std::mutex> lock(mu);
  const fs::path log = kRoot / "cmd_output.txt";
  const std::string cmd =
      env_prefix + std::string(CGFM_BIN) + " " + args + " > " + q(log) + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = read_file_bytes(log.string());
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return -1;
}

std::string data_args() {
  return "--data " + q(kRoot / "data.csv") + " --history 12 --horizon 3";
}

/// Builds the shared fixture once: a synthetic series, a short training run,
/// and a test-split forecast.
void ensure_pipeline() {
  static std::once_flag once;
  std::call_once(once, [] {
    fs::create_directories(kRoot);
    save_series_csv(synth_sinmix(400, 2, 21, 0.02), {"a", "b"}, (kRoot / "data.csv").string());
    std::string out;
    REQUIRE(run_cmd("train " + data_args() +
                        " --epochs 0 --max-steps 60 --width 16 --depth 1 --embed-k 2"
                        " --batch-size 16 --val-every 20 --seed 5 --out " +
                        q(kRoot / "train_out"),
                    &out) == 0);
    REQUIRE(run_cmd("forecast " + data_args() + " --params " + q(kRoot / "train_out/params.bin") +
                        " --split test --steps 10 --seed 7 --out " + q(kRoot / "fc_out"),
                    &out) == 0);
  });
}

}  // namespace

TEST_CASE("cli: train and forecast emit their artifacts") {
  ensure_pipeline();
  CHECK(fs::exists(kRoot / "train_out/params.bin"));
  CHECK(fs::exists(kRoot / "train_out/train_log.csv"));
  CHECK(fs::exists(kRoot / "train_out/config.resolved"));
  CHECK(fs::exists(kRoot / "fc_out/forecast.csv"));
  CHECK(fs::exists(kRoot / "fc_out/norm_stats.json"));

  // the trained parameter file round-trips through the serializer
  const VelocityNet net = load_params(read_file_bytes((kRoot / "train_out/params.bin").string()));
  CHECK(net.C == 2);
  CHECK(net.L == 12);
  CHECK(net.Fh == 3);

  // the log has one row per step and a header
  std::ifstream log((kRoot / "train_out/train_log.csv").string());
  std::string line;
  std::getline(log, line);
  CHECK(line == "step,train_loss,val_loss,wall_ms");
  int rows = 0;
  while (std::getline(log, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 60);
}

TEST_CASE("cli: evaluate scores a forecast and reports metrics") {
  ensure_pipeline();
  std::string out;
  REQUIRE(run_cmd("evaluate " + data_args() + " --forecast " + q(kRoot / "fc_out/forecast.csv") +
                      " --steps 10 --seed 7 --out " + q(kRoot / "ev_out"),
                  &out) == 0);
  CHECK(out.find("mse=") != std::string::npos);
  CHECK(out.find("n_windows=") != std::string::npos);

  const json rep = read_json_file((kRoot / "ev_out/report.json").string());
  CHECK(rep.at("fingerprint").at("steps") == 10);
  CHECK(rep.at("fingerprint").at("seed") == 7);
  CHECK(rep.at("mse").get<double>() > 0.0);
  CHECK(rep.at("wall_ms") == 0);

  const WindowedDataset ds = make_windows(load_csv((kRoot / "data.csv").string()).raw, 12, 3);
  CHECK(rep.at("n_windows").get<long>() ==
        static_cast<long>(ds.windows_of(Split::Test).size()));
}

TEST_CASE("cli: the truth scored as a forecast gives exactly zero error") {
  ensure_pipeline();
  const WindowedDataset ds = make_windows(load_csv((kRoot / "data.csv").string()).raw, 12, 3);
  ForecastRows fc;
  for (long w : ds.windows_of(Split::Test)) {
    fc.window_idx.push_back(w);
  }
  fc.values.resize(static_cast<Eigen::Index>(fc.window_idx.size()), ds.C() * ds.Fh);
  for (std::size_t i = 0; i < fc.window_idx.size(); ++i) {
    fc.values.row(static_cast<Eigen::Index>(i)) =
        flatten_rowmajor(ds.future(fc.window_idx[i])).transpose();
  }
  save_forecast_csv(fc, (kRoot / "truth.csv").string(), ds.C(), ds.Fh);

  std::string out;
  REQUIRE(run_cmd("evaluate " + data_args() + " --forecast " + q(kRoot / "truth.csv") +
                      " --out " + q(kRoot / "ev_truth"),
                  &out) == 0);
  const json rep = read_json_file((kRoot / "ev_truth/report.json").string());
  CHECK(rep.at("mse").get<double>() == 0.0);
  CHECK(rep.at("mae").get<double>() == 0.0);
}

TEST_CASE("cli: config.resolved reruns reproduce params.bin byte for byte") {
  ensure_pipeline();
  const std::string before = read_file_bytes((kRoot / "train_out/params.bin").string());
  std::string out;
  REQUIRE(run_cmd("--config " + q(kRoot / "train_out/config.resolved") + " train", &out) == 0);
  const std::string after = read_file_bytes((kRoot / "train_out/params.bin").string());
  CHECK(before == after);
}

TEST_CASE("cli: forecasts are deterministic and thread-count invariant") {
  ensure_pipeline();
  std::string out;
  REQUIRE(run_cmd("forecast " + data_args() + " --params " + q(kRoot / "train_out/params.bin") +
                      " --split test --steps 10 --seed 7 --out " + q(kRoot / "fc_rerun"),
                  &out) == 0);
  REQUIRE(run_cmd("forecast " + data_args() + " --params " + q(kRoot / "train_out/params.bin") +
                      " --split test --steps 10 --seed 7 --out " + q(kRoot / "fc_mt"),
                  &out, "CGFM_THREADS=4 ") == 0);
  const std::string base = read_file_bytes((kRoot / "fc_out/forecast.csv").string());
  CHECK(read_file_bytes((kRoot / "fc_rerun/forecast.csv").string()) == base);
  CHECK(read_file_bytes((kRoot / "fc_mt/forecast.csv").string()) == base);

  // a different sampling seed changes the forecast
  REQUIRE(run_cmd("forecast " + data_args() + " --params " + q(kRoot / "train_out/params.bin") +
                      " --split test --steps 10 --seed 8 --out " + q(kRoot / "fc_seed8"),
                  &out) == 0);
  CHECK(read_file_bytes((kRoot / "fc_seed8/forecast.csv").string()) != base);
}

TEST_CASE("cli: usage and configuration failures exit with 2") {
  ensure_pipeline();
  std::string out;
  CHECK(run_cmd("train --out " + q(kRoot / "x"), &out) == 2);  // --data missing
  CHECK(out.find("--data") != std::string::npos);

  CHECK(run_cmd("train " + data_args() + " --scheduler poly:0 --out " + q(kRoot / "x"), &out) ==
        2);
  CHECK(out.find("n >= 2") != std::string::npos);

  CHECK(run_cmd("frobnicate", &out) == 2);

  // horizon too large for the val/test segments
  CHECK(run_cmd("train --data " + q(kRoot / "data.csv") +
                    " --history 60 --horizon 30 --out " + q(kRoot / "x"),
                &out) == 2);
  CHECK(out.find("L+Fh") != std::string::npos);
}

TEST_CASE("cli: runtime failures exit with 1") {
  ensure_pipeline();
  std::string out;
  CHECK(run_cmd("forecast " + data_args() + " --params " + q(kRoot / "no_such.bin") +
                    " --split test --out " + q(kRoot / "x"),
                &out) == 1);
  CHECK(run_cmd("evaluate " + data_args() + " --forecast " + q(kRoot / "no_such.csv") +
                    " --out " + q(kRoot / "x"),
                &out) == 1);
}

TEST_CASE("cli: aggregate pools matching reports and rejects mixed ones") {
  ensure_pipeline();
  std::string out;
  REQUIRE(run_cmd("evaluate " + data_args() + " --forecast " + q(kRoot / "fc_out/forecast.csv") +
                      " --steps 10 --seed 7 --out " + q(kRoot / "ev_s7"),
                  &out) == 0);
  REQUIRE(run_cmd("evaluate " + data_args() + " --forecast " + q(kRoot / "fc_seed8/forecast.csv") +
                      " --steps 10 --seed 8 --out " + q(kRoot / "ev_s8"),
                  &out) == 0);
  REQUIRE(run_cmd("evaluate --aggregate " + q(kRoot / "ev_s7/report.json") + " --aggregate " +
                      q(kRoot / "ev_s8/report.json") + " --out " + q(kRoot / "agg_out"),
                  &out) == 0);
  const json agg = read_json_file((kRoot / "agg_out/aggregate.json").string());
  CHECK(agg.at("n_runs") == 2);
  CHECK(agg.at("seeds") == json::array({7, 8}));
  CHECK_FALSE(agg.at("fingerprint").contains("seed"));

  // mismatched steps in the fingerprint: refuse to pool
  REQUIRE(run_cmd("evaluate " + data_args() + " --forecast " + q(kRoot / "fc_out/forecast.csv") +
                      " --steps 40 --seed 9 --out " + q(kRoot / "ev_mixed"),
                  &out) == 0);
  CHECK(run_cmd("evaluate --aggregate " + q(kRoot / "ev_s7/report.json") + " --aggregate " +
                    q(kRoot / "ev_mixed/report.json") + " --out " + q(kRoot / "agg_bad"),
                &out) == 2);
  CHECK(out.find("mixed configurations") != std::string::npos);
}

TEST_CASE("cli: verify --quick passes and emits machine-readable checks") {
  ensure_pipeline();
  std::string out;
  REQUIRE(run_cmd("verify --quick --json " + q(kRoot / "verify.json"), &out) == 0);
  CHECK(out.find("checks passed") != std::string::npos);
  const json v = read_json_file((kRoot / "verify.json").string());
  CHECK(v.at("all_pass") == true);
  CHECK(v.at("checks").size() >= 10);
  for (const auto& c : v.at("checks")) {
    CHECK(c.at("pass") == true);
    CHECK_FALSE(c.at("name").get<std::string>().empty());
  }
}

TEST_CASE("cli: pca projection is deterministic and guards tiny inputs") {
  ensure_pipeline();
  std::string out;
  REQUIRE(run_cmd("pca --forecast " + q(kRoot / "fc_out/forecast.csv") + " --out " +
                      q(kRoot / "pca1.csv"),
                  &out) == 0);
  REQUIRE(run_cmd("pca --forecast " + q(kRoot / "fc_out/forecast.csv") + " --out " +
                      q(kRoot / "pca2.csv"),
                  &out) == 0);
  const std::string a = read_file_bytes((kRoot / "pca1.csv").string());
  CHECK(a == read_file_bytes((kRoot / "pca2.csv").string()));
  CHECK(a.rfind("window_idx,pc1,pc2\n", 0) == 0);

  std::ofstream tiny((kRoot / "tiny.csv").string());
  tiny << "window_idx,c0_f0\n0,1.0\n1,2.0\n";
  tiny.close();
  CHECK(run_cmd("pca --forecast " + q(kRoot / "tiny.csv") + " --out " + q(kRoot / "x.csv"),
                &out) == 2);
}

TEST_CASE("cli: help succeeds on the app and every subcommand") {
  std::string out;
  CHECK(run_cmd("--help", &out) == 0);
  CHECK(out.find("train") != std::string::npos);
  CHECK(out.find("forecast") != std::string::npos);
  for (const std::string sub : {"train", "forecast", "evaluate", "verify", "pca"}) {
    CHECK(run_cmd(sub + " --help", &out) == 0);
  }
}
