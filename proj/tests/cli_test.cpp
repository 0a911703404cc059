// Drives the installed binary end to end: data preparation, runs, sweeps,
// and the exit-code contract for bad invocations.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "trip/sparse_tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("trip_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// runs the binary with cwd inside the temp dir; stdout/stderr land next to it
int run_cli(const TempDir& dir, const std::string& args) {
  const std::string cmd = "cd " + dir.path.string() + " && " +
                          std::string(TRIP_BIN) + " " + args +
                          " >cli_stdout.txt 2>cli_stderr.txt";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string cli_stdout(const TempDir& dir) {
  return slurp(dir.path / "cli_stdout.txt");
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n' ? 1 : 0;
  return n;
}

void write_file(const TempDir& dir, const std::string& name,
                const std::string& text) {
  std::ofstream out(dir.path / name);
  out << text;
}

trip::SparseTensor read_back(const TempDir& dir, const std::string& name) {
  return trip::read_tensor((dir.path / name).string());
}

const char* kRunConfig = R"(
[data]
source = synth
shape = 18, 10, 8
gt_rank = 2
noise_sd = 0.05
cap = 10

[solver]
rank = 2
lambda = 0
omega = 10
mu = 1
max_iter = 150
tol = 1e-6
seed = 3

[federation]
k = 2
transport = in_process
time_mode = modeled

[partition]
skew = even

[output]
dir = out
)";

const char* kSweepConfig = R"(
[data]
source = synth
shape = 10, 6, 5
gt_rank = 2
noise_sd = 0.05
cap = 10

[solver]
rank = 2
lambda = 0
omega = 10
mu = 1
max_iter = 20
tol = 1e-6

[federation]
k = 2
transport = in_process
time_mode = modeled

[sweep]
scenario = smoke
methods = trip, central
hospital_counts = 2
skews = even
repeats = 2
base_seed = 5

[output]
dir = out
)";

}  // namespace

TEST_CASE("the command line reports usage and rejects bad invocations") {
  TempDir dir;
  CHECK(run_cli(dir, "--help") == 0);
  CHECK(run_cli(dir, "") == 1);
  CHECK(run_cli(dir, "frobnicate") == 1);
  CHECK(run_cli(dir, "run") == 1);
  CHECK(run_cli(dir, "run --config nope.toml") == 1);
  CHECK(run_cli(dir, "synth --bogus x") == 1);
}

TEST_CASE("synth generates the same tensor for the same seed") {
  TempDir dir;
  const std::string args = "--shape 10x8x6 --rank 2 --noise-sd 0.1 --cap 5";
  REQUIRE(run_cli(dir, "synth --out a.txt " + args + " --seed 9") == 0);
  REQUIRE(run_cli(dir, "synth --out b.txt " + args + " --seed 9") == 0);
  REQUIRE(run_cli(dir, "synth --out c.txt " + args + " --seed 10") == 0);
  CHECK(slurp(dir.path / "a.txt") == slurp(dir.path / "b.txt"));
  CHECK(slurp(dir.path / "a.txt") != slurp(dir.path / "c.txt"));

  const auto t = read_back(dir, "a.txt");
  REQUIRE(t.order() == 3);
  CHECK(t.dim(0) == 10);
  CHECK(t.dim(1) == 8);
  CHECK(t.dim(2) == 6);
  REQUIRE(t.nnz() > 0);
  for (double v : t.values()) {
    CHECK(v == std::round(v));
    CHECK(v >= 1.0);
    CHECK(v <= 5.0);
  }
}

TEST_CASE("partition covers every patient exactly once") {
  TempDir dir;
  REQUIRE(run_cli(dir, "synth --out t.txt --shape 9x5x4 --rank 2 --seed 3") == 0);
  REQUIRE(run_cli(dir, "partition --tensor t.txt --k 3 --seed 1 --out-prefix shard") == 0);
  const auto t = read_back(dir, "t.txt");
  std::size_t patients = 0, nnz = 0;
  for (int h = 0; h < 3; ++h) {
    const auto s = read_back(dir, "shard_" + std::to_string(h) + ".txt");
    REQUIRE(s.order() == 3);
    CHECK(s.dim(1) == t.dim(1));
    CHECK(s.dim(2) == t.dim(2));
    patients += s.dim(0);
    nnz += s.nnz();
  }
  CHECK(patients == t.dim(0));
  CHECK(nnz == t.nnz());

  SUBCASE("a skewed split gives hospital zero the big share") {
    REQUIRE(run_cli(dir, "partition --tensor t.txt --k 3 --skew 0.8 --out-prefix sk") == 0);
    CHECK(read_back(dir, "sk_0.txt").dim(0) == 7);
    CHECK(read_back(dir, "sk_1.txt").dim(0) == 1);
    CHECK(read_back(dir, "sk_2.txt").dim(0) == 1);
  }
}

TEST_CASE("run writes a json report and an iteration trace") {
  TempDir dir;
  write_file(dir, "cfg.toml", kRunConfig);
  REQUIRE(run_cli(dir, "run --config cfg.toml --method trip --out trip.json --trace tr.csv") == 0);
  const json trip_report = json::parse(slurp(dir.path / "trip.json"));
  CHECK(trip_report["method"] == "trip");
  CHECK(trip_report["k"] == 2);
  CHECK(trip_report["seed"] == 3);
  const auto iters = trip_report["trace"]["iterations"].get<std::size_t>();
  REQUIRE(iters >= 2);
  CHECK(trip_report["trace"]["objective"].size() == iters);
  CHECK(trip_report["trace"]["rmse"].size() == iters);
  CHECK(trip_report["trace"]["residual"].size() == iters);
  CHECK(trip_report["rmse"].get<double>() ==
        doctest::Approx(trip_report["trace"]["rmse"].back().get<double>()));
  const auto& timing = trip_report["timing"];
  CHECK(timing["total_seconds"].get<double>() ==
        doctest::Approx(timing["computation_seconds"].get<double>() +
                        timing["communication_seconds"].get<double>() +
                        timing["alignment_seconds"].get<double>()));
  const std::string trace = slurp(dir.path / "tr.csv");
  CHECK(trace.rfind("iteration,objective,rmse,residual\n", 0) == 0);
  CHECK(line_count(trace) == iters + 1);

  SUBCASE("the pooled baseline lands within a percent of the federated fit") {
    REQUIRE(run_cli(dir, "run --config cfg.toml --method central --out central.json") == 0);
    const json central = json::parse(slurp(dir.path / "central.json"));
    CHECK(central["k"] == 1);
    const double rt = trip_report["rmse"].get<double>();
    const double rc = central["rmse"].get<double>();
    CHECK(std::abs(rt - rc) / rc < 0.01);
    CHECK(fs::exists(dir.path / "out" / "trace_central.csv"));
  }

  SUBCASE("a seed override changes the data and the answer") {
    REQUIRE(run_cli(dir, "run --config cfg.toml --method trip --seed 4 --out seeded.json") == 0);
    const json seeded = json::parse(slurp(dir.path / "seeded.json"));
    CHECK(seeded["seed"] == 4);
    CHECK(seeded["rmse"].get<double>() != trip_report["rmse"].get<double>());
    CHECK(fs::exists(dir.path / "out" / "trace_trip.csv"));
  }

  SUBCASE("the isolated baseline runs through the same front end") {
    REQUIRE(run_cli(dir, "run --config cfg.toml --method local --out local.json") == 0);
    const json local = json::parse(slurp(dir.path / "local.json"));
    CHECK(local["method"] == "local");
    CHECK(local["trace"]["iterations"] == 1);
    CHECK(line_count(slurp(dir.path / "out" / "trace_local.csv")) == 2);
  }
}

TEST_CASE("the bundled example config drives a full central run") {
  TempDir dir;
  const std::string base = std::string("run --config ") + TRIP_EXAMPLE_CONFIG;
  REQUIRE(run_cli(dir, base + " --method central --out ex.json") == 0);
  CHECK(fs::exists(dir.path / "out" / "trace_central.csv"));
  const json report = json::parse(slurp(dir.path / "ex.json"));
  CHECK(report["rmse"].get<double>() > 0.0);
  CHECK(report["rmse"].get<double>() < 1.0);
  const std::string first = slurp(dir.path / "out" / "trace_central.csv");
  REQUIRE(run_cli(dir, base + " --method central") == 0);
  CHECK(slurp(dir.path / "out" / "trace_central.csv") == first);
}

TEST_CASE("broken configurations exit with status one") {
  TempDir dir;
  SUBCASE("unknown keys are refused") {
    write_file(dir, "bad.toml", "[solver]\nrark = 3\n");
    CHECK(run_cli(dir, "run --config bad.toml --method central") == 1);
  }
  SUBCASE("too many hospitals for the alignment protocol") {
    write_file(dir, "big.toml",
               "[data]\nsource = synth\nshape = 20, 6, 5\n\n"
               "[federation]\nk = 17\nalign = true\ntime_mode = modeled\n");
    CHECK(run_cli(dir, "run --config big.toml --method trip") == 1);
  }
  SUBCASE("unknown methods are refused") {
    write_file(dir, "ok.toml", "[data]\nsource = synth\nshape = 6, 4, 3\n");
    CHECK(run_cli(dir, "run --config ok.toml --method bogus") == 1);
  }
  SUBCASE("a sweep over an unknown method is refused") {
    write_file(dir, "sw.toml",
               "[data]\nsource = synth\nshape = 8, 4, 3\n\n"
               "[sweep]\nmethods = ftf\nhospital_counts = 2\nrepeats = 1\n\n"
               "[federation]\ntime_mode = modeled\n");
    CHECK(run_cli(dir, "sweep --config sw.toml --out-dir sw") == 1);
  }
}

TEST_CASE("sweeps write identical tables on every invocation") {
  TempDir dir;
  write_file(dir, "sweep.toml", kSweepConfig);
  REQUIRE(run_cli(dir, "sweep --config sweep.toml --out-dir one") == 0);
  REQUIRE(run_cli(dir, "sweep --config sweep.toml --out-dir two") == 0);
  const std::string csv = slurp(dir.path / "one" / "results.csv");
  CHECK(csv.rfind("scenario,method,k,skew,rmse_mean,rmse_sd,comp_s,comm_s,align_s,total_s\n", 0) == 0);
  CHECK(line_count(csv) == 3);
  CHECK(csv == slurp(dir.path / "two" / "results.csv"));
  CHECK(slurp(dir.path / "one" / "results.json") ==
        slurp(dir.path / "two" / "results.json"));
}

TEST_CASE("build-tensor writes the tensor and its vocabularies") {
  TempDir dir;
  write_file(dir, "events.csv",
             "patient_id,kind,code,timestamp\n"
             "alice,lab,10,0\n"
             "alice,med,5,1000\n"
             "bob,lab,20,0\n"
             "bob,med,8,1200\n"
             "carol,lab,10,50\n");
  REQUIRE(run_cli(dir, "build-tensor --events events.csv --out cooc.txt "
                       "--window 3600 --kind-a lab --kind-b med") == 0);
  const auto t = read_back(dir, "cooc.txt");
  REQUIRE(t.order() == 3);
  CHECK(t.dim(0) == 3);
  CHECK(t.dim(1) == 2);
  CHECK(t.dim(2) == 2);
  CHECK(t.nnz() == 2);
  CHECK(slurp(dir.path / "cooc.txt.vocab1") == "10\n20\n");
  CHECK(slurp(dir.path / "cooc.txt.vocab2") == "5\n8\n");
  CHECK(cli_stdout(dir).find("3 patients") != std::string::npos);
}

TEST_CASE("align reports the merged vocabulary for real shards") {
  TempDir dir;
  REQUIRE(run_cli(dir, "synth --out t.txt --shape 8x5x4 --rank 2 --seed 6") == 0);
  REQUIRE(run_cli(dir, "partition --tensor t.txt --k 2 --out-prefix p") == 0);
  REQUIRE(run_cli(dir, "align --shards p_0.txt,p_1.txt --seed 1") == 0);
  const std::string out = cli_stdout(dir);
  CHECK(out.find("mode 1: global vocabulary") != std::string::npos);
  CHECK(out.find("mode 2: global vocabulary") != std::string::npos);
  CHECK(out.find("attempts 1") != std::string::npos);
}
