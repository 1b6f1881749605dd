#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"
#include "ncode/cli.hpp"
#include "ncode/config.hpp"

using namespace ncode;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome ncode_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli_main(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("ncode_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& s) const { return path_ / s; }
  std::string str() const { return path_.string(); }

 private:
  fs::path path_;
};

std::string write(const fs::path& p, const std::string& text) {
  write_text_file(p, text);
  return p.string();
}

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

json read_json(const fs::path& p) { return json::parse(read_text_file(p)); }

const char* kSmallReflection = R"({
  "task": {"name": "reflection", "n_train": 16, "n_eval": 16},
  "train": {"epochs": 12, "eval_every": 4, "batch_size": 4, "shuffle": true, "seed": 5}
})";

}  // namespace

TEST_CASE("run writes every artifact") {
  TempDir dir;
  const auto cfg = write(dir / "c.json", kSmallReflection);
  const auto o = ncode_cli({"run", cfg, "--out", (dir / "run").string(), "--quiet"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  for (const char* f : {"metrics.csv", "trajectories.csv", "checkpoint.json", "summary.json",
                        "config.json"}) {
    CHECK_MESSAGE(fs::exists(dir / "run" / f), f);
  }
  const std::string metrics = read_text_file(dir / "run" / "metrics.csv");
  CHECK(metrics.rfind("epoch,train_loss,eval_loss,accuracy,nfe,wall_ms\n", 0) == 0);
  CHECK(count_lines(metrics) == 4);

  const json s = read_json(dir / "run" / "summary.json");
  for (const char* k : {"task", "final_loss", "final_accuracy", "total_nfe", "wall_ms", "seed",
                        "versions"}) {
    CHECK_MESSAGE(s.contains(k), k);
  }
  CHECK(s["task"] == "reflection");
  CHECK(s["seed"] == 5);
  CHECK(s["final_loss"].is_number());
  CHECK(s["total_nfe"].get<std::size_t>() > 0);

  const std::string traj = read_text_file(dir / "run" / "trajectories.csv");
  CHECK(traj.rfind("example,t,x_0\n", 0) == 0);
  CHECK(count_lines(traj) == 1 + 8 * 21);

  // The resolved config reloads to the same structure the run used.
  ExperimentConfig used = load_config(dir / "run" / "config.json");
  CHECK(used.out_dir == (dir / "run").string());
  CHECK(load_checkpoint(dir / "run" / "checkpoint.json").config == used);
}

TEST_CASE("identical seeds give byte-identical metrics across thread counts") {
  TempDir dir;
  const auto cfg = write(dir / "c.json", kSmallReflection);
  std::vector<std::string> files;
  for (const char* threads : {"1", "3", "1"}) {
    const std::string out = (dir / (std::string("t") + threads + std::to_string(files.size()))).string();
    const auto o =
        ncode_cli({"run", cfg, "--out", out, "--threads", threads, "--quiet", "--no-wall-time"});
    REQUIRE(o.code == 0);
    files.push_back(read_text_file(fs::path(out) / "metrics.csv"));
  }
  CHECK(files[0] == files[1]);
  CHECK(files[0] == files[2]);
}

TEST_CASE("run exit codes") {
  TempDir dir;
  SUBCASE("malformed JSON") {
    const auto cfg = write(dir / "bad.json", "{\n  \"task\": {\"name\": \"reflection\"},\n  ]\n}\n");
    const auto o = ncode_cli({"run", cfg, "--out", dir.str()});
    CHECK(o.code == 1);
    CHECK(o.err.find("line 3") != std::string::npos);
  }
  SUBCASE("unknown task and solver list valid values") {
    const auto cfg = write(dir / "t.json", R"({"task": {"name": "cifar"}})");
    const auto o = ncode_cli({"run", cfg, "--out", dir.str()});
    CHECK(o.code == 1);
    CHECK(o.err.find("valid: reflection") != std::string::npos);
    const auto good = write(dir / "g.json", kSmallReflection);
    const auto s = ncode_cli({"run", good, "--solver", "midpoint", "--out", dir.str()});
    CHECK(s.code == 1);
    CHECK(s.err.find("valid: euler, rk4, dopri5") != std::string::npos);
  }
  SUBCASE("missing file and bad flags") {
    CHECK(ncode_cli({"run", (dir / "none.json").string()}).code == 1);
    CHECK(ncode_cli({"run"}).code == 1);
    CHECK(ncode_cli({"frobnicate"}).code == 1);
    CHECK(ncode_cli({"--help"}).code == 0);
  }
  SUBCASE("solver budget exhaustion is a numerical failure") {
    const auto cfg = write(dir / "n.json", R"({
      "task": {"name": "reflection", "n_train": 4, "n_eval": 4},
      "solver": {"rtol": 1e-12, "atol": 1e-12, "max_steps": 3},
      "train": {"epochs": 1}})");
    const auto o = ncode_cli({"run", cfg, "--out", (dir / "n").string(), "--quiet"});
    CHECK(o.code == 2);
    CHECK(o.err.find("numerical failure") != std::string::npos);
  }
}

TEST_CASE("epochs=0 checkpoints the initial parameters") {
  TempDir dir;
  const auto cfg = write(dir / "c.json", R"({"task": {"name": "annuli", "n_train": 8, "n_eval": 8},
                                             "train": {"seed": 11}})");
  const auto o = ncode_cli({"run", cfg, "--epochs", "0", "--out", (dir / "r").string()});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const Checkpoint ck = load_checkpoint(dir / "r" / "checkpoint.json");
  const auto obj = make_objective(ck.config);
  CHECK(ck.epoch == 0);
  CHECK(ck.params() == initial_params(ck.config, *obj));
  CHECK(ck.head.size() == obj->head_dim());
  CHECK(ck.config.seed == 11);
}

TEST_CASE("flags override config fields") {
  TempDir dir;
  const auto cfg = write(dir / "c.json", kSmallReflection);
  const auto out = (dir / "o").string();
  const auto o = ncode_cli({"run", cfg, "--seed", "9", "--epochs", "2", "--solver", "rk4",
                            "--rtol", "1e-4", "--atol", "1e-5", "--threads", "2", "--out", out,
                            "--quiet"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const ExperimentConfig used = load_config(fs::path(out) / "config.json");
  CHECK(used.seed == 9);
  CHECK(used.train.epochs == 2);
  CHECK(used.solver.method == Method::rk4);
  CHECK(used.solver.rtol == 1e-4);
  CHECK(used.solver.atol == 1e-5);
  CHECK(used.train.threads == 2);
  CHECK(used.out_dir == out);
}

TEST_CASE("grad-check fixtures") {
  TempDir dir;
  const std::string base = R"("task": {"name": "reflection", "n_train": 4, "n_eval": 4},
      "solver": {"rtol": 1e-8, "atol": 1e-8})";
  SUBCASE("task loss passes") {
    const auto cfg = write(dir / "a.json", "{" + base + R"(, "grad_check": {"examples": 3}})");
    const auto report = (dir / "a.csv").string();
    const auto o = ncode_cli({"grad-check", cfg, "--report", report});
    CHECK_MESSAGE(o.code == 0, o.err);
    const std::string csv = read_text_file(report);
    CHECK(csv.rfind("coord,adjoint,fd,rel_err\n", 0) == 0);
    CHECK(count_lines(csv) == 1 + default_config(TaskName::reflection).model.meta_dim());
  }
  SUBCASE("corrupted adjoint fails") {
    const auto cfg = write(dir / "b.json",
                           "{" + base + R"(, "grad_check": {"mutation": "flip_adjoint_sign"}})");
    const auto o = ncode_cli({"grad-check", cfg, "--out", dir.str()});
    CHECK(o.code != 0);
    CHECK(o.out.find("FAIL") != std::string::npos);
  }
  SUBCASE("zero loss gives an all-zero table") {
    const auto cfg = write(dir / "z.json", R"({"task": {"name": "annuli", "n_train": 4, "n_eval": 4},
                                              "grad_check": {"loss": "zero", "examples": 2}})");
    const auto report = (dir / "z.csv").string();
    const auto o = ncode_cli({"grad-check", cfg, "--report", report});
    CHECK(o.code == 0);
    const auto rows = read_numeric_csv(report);
    REQUIRE(!rows.empty());
    for (const auto& r : rows) {
      CHECK(r[1] == 0.0);
      CHECK(r[2] == 0.0);
      CHECK(r[3] == 0.0);
    }
  }
}

TEST_CASE("replay reproduces the run") {
  TempDir dir;
  const auto cfg = write(dir / "c.json", R"({
    "task": {"name": "annuli", "n_train": 64, "n_eval": 64},
    "train": {"epochs": 2, "batch_size": 16, "seed": 2}})");
  const auto run_dir = dir / "r";
  REQUIRE(ncode_cli({"run", cfg, "--out", run_dir.string(), "--quiet"}).code == 0);
  const double final_loss = read_json(run_dir / "summary.json")["final_loss"].get<double>();

  const auto inputs = write(dir / "in.csv", "x,y\n0.1,0.2\n1.8,0\n# comment\n\n-0.5,1.7\n");
  const auto o = ncode_cli({"replay", (run_dir / "checkpoint.json").string(), inputs, "--grid",
                            "9", "--threads", "2"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const double replayed = read_json(run_dir / "replay.json")["eval_loss"].get<double>();
  CHECK(std::abs(replayed - final_loss) <= 1e-10);

  const auto preds = read_numeric_csv((run_dir / "predictions.csv").string());
  REQUIRE(preds.size() == 3);
  for (const auto& r : preds) {
    REQUIRE(r.size() == 4);
    CHECK(r[2] + r[3] == doctest::Approx(1.0));
  }
  const auto grid = read_numeric_csv((run_dir / "grid.csv").string());
  CHECK(grid.size() == 81);
  for (const auto& r : grid) {
    CHECK(r[2] >= 0.0);
    CHECK(r[2] <= 1.0);
    CHECK(r[3] >= 0.0);
    CHECK(r[3] <= 1.0);
  }

  SUBCASE("inputs with the wrong width") {
    const auto bad = write(dir / "bad.csv", "1,2,3\n");
    CHECK(ncode_cli({"replay", (run_dir / "checkpoint.json").string(), bad}).code == 1);
  }
  SUBCASE("unsupported checkpoint version") {
    std::string text = read_text_file(run_dir / "checkpoint.json");
    const auto pos = text.find("\"format_version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 19, "\"format_version\": 7");
    const auto ck = write(dir / "v7.json", text);
    const auto r = ncode_cli({"replay", ck});
    CHECK(r.code == 1);
    CHECK(r.err.find("format_version 7") != std::string::npos);
  }
}

TEST_CASE("replay of a trained reflection model maps 0.7 to -0.7") {
  TempDir dir;
  const auto o = ncode_cli({"run", std::string(NCODE_SOURCE_DIR) + "/configs/reflection.json",
                            "--out", (dir / "r").string(), "--quiet"});
  REQUIRE_MESSAGE(o.code == 0, o.err);
  const double mse = read_json(dir / "r" / "summary.json")["final_loss"].get<double>();
  CHECK(mse < 1e-3);
  const auto inputs = write(dir / "in.csv", "0.7\n");
  REQUIRE(ncode_cli({"replay", (dir / "r" / "checkpoint.json").string(), inputs}).code == 0);
  const auto preds = read_numeric_csv((dir / "r" / "predictions.csv").string());
  REQUIRE(preds.size() == 1);
  const double err = preds[0][1] + 0.7;
  CHECK(err * err < 1e-3);
}

TEST_CASE("memorize replay is refused") {
  TempDir dir;
  const auto cfg = write(dir / "m.json", R"({"task": {"name": "memorize", "n_train": 2,
                                             "n_eval": 2, "mem_bits": 8}})");
  REQUIRE(ncode_cli({"run", cfg, "--epochs", "0", "--out", (dir / "m").string()}).code == 0);
  const auto o = ncode_cli({"replay", (dir / "m" / "checkpoint.json").string()});
  CHECK(o.code == 1);
  CHECK(o.err.find("memorize") != std::string::npos);
}

TEST_CASE("gen-data dumps datasets") {
  TempDir dir;
  const auto cfg = write(dir / "a.json", R"({"task": {"name": "annuli", "n_train": 10, "n_eval": 6}})");
  REQUIRE(ncode_cli({"gen-data", cfg, "--out", (dir / "a").string()}).code == 0);
  const std::string train = read_text_file(dir / "a" / "train.csv");
  CHECK(train.rfind("in_0,in_1,label\n", 0) == 0);
  CHECK(count_lines(train) == 11);
  CHECK(count_lines(read_text_file(dir / "a" / "eval.csv")) == 7);

  // Same seed, same rows; different seed, different rows.
  REQUIRE(ncode_cli({"gen-data", cfg, "--out", (dir / "b").string()}).code == 0);
  CHECK(read_text_file(dir / "b" / "train.csv") == train);
  REQUIRE(ncode_cli({"gen-data", cfg, "--seed", "1", "--out", (dir / "c").string()}).code == 0);
  CHECK(read_text_file(dir / "c" / "train.csv") != train);

  const auto mem = write(dir / "m.json", R"({"task": {"name": "memorize", "n_train": 3,
                                             "n_eval": 2, "mem_bits": 10}})");
  REQUIRE(ncode_cli({"gen-data", mem, "--out", (dir / "m").string()}).code == 0);
  const json ep = read_json(dir / "m" / "episodes.json");
  CHECK(ep["train"].size() == 3);
  CHECK(ep["eval"].size() == 2);
  CHECK(ep["eval"][0]["target"].size() == 10);
  CHECK(ep["eval"][0]["patterns"].size() == 3);
}

TEST_CASE("read_numeric_csv") {
  TempDir dir;
  const auto p = write(dir / "x.csv", "a,b\r\n1, 2\n\n#skip\n3e-1,-4\n");
  const auto rows = read_numeric_csv(p);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == std::vector<double>{1.0, 2.0});
  CHECK(rows[1] == std::vector<double>{0.3, -4.0});
  const auto bad = write(dir / "y.csv", "1,2\nx,3\n");
  CHECK_THROWS_AS(read_numeric_csv(bad), InputError);
}
