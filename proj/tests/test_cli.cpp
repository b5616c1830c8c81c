#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "json.hpp"
#include "mambadet/binary_io.hpp"
#include "mambadet/cli.hpp"

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

using namespace mambadet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mambadet");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mambadet_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir.parent_path());
  return dir;
}

std::vector<std::string> tiny_data_flags() {
  return {"--n-train", "16", "--n-val", "8", "--n-test", "6", "--image-h", "16", "--image-w", "16"};
}

}  // namespace

TEST_CASE("scan-show renders visitation ranks") {
  auto r = run({"scan-show", "--strategy", "zigzag", "--height", "2", "--width", "3"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("0 1 2\n5 4 3\n") != std::string::npos);

  r = run({"scan-show", "--strategy", "raster", "--height", "1", "--width", "4"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("0 1 2 3\n") != std::string::npos);

  r = run({"scan-show", "--strategy", "cross", "--height", "2", "--width", "2"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("0 1\n2 3\n") != std::string::npos);
  CHECK(r.out.find("3 2\n1 0\n") != std::string::npos);
  CHECK(r.out.find("0 2\n1 3\n") != std::string::npos);
  CHECK(r.out.find("3 1\n2 0\n") != std::string::npos);

  const fs::path ppm = fresh_dir("ppm") / "scan.ppm";
  fs::create_directories(ppm.parent_path());
  r = run({"scan-show", "--strategy", "local", "--height", "4", "--width", "4", "--ppm", ppm.string()});
  CHECK(r.code == cli::kExitOk);
  REQUIRE(fs::exists(ppm));
  CHECK(io::read_file(ppm.string()).rfind("P6\n", 0) == 0);
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"no-such-command"}).code == cli::kExitUsage);
  CHECK(run({"scan-show", "--bogus"}).code == cli::kExitUsage);
  const auto r = run({"scan-show", "--strategy", "local", "--height", "4", "--width", "6", "--param", "4"});
  CHECK(r.code == cli::kExitUsage);
  CHECK_FALSE(r.err.empty());
  CHECK(run({"scan-show", "--strategy", "spiral"}).code == cli::kExitUsage);
  CHECK(run({"param-count", "--preset", "vim-huge"}).code == cli::kExitUsage);
  CHECK(run({"make-data"}).code == cli::kExitUsage);
  CHECK(run({"scan-show", "--config", "/nonexistent/cfg.txt"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("param-count") {
  auto r = run({"param-count", "--preset", "vim-tiny"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.find("6955394") != std::string::npos);
  r = run({"param-count", "--preset", "desk-vim", "--depth", "1", "--tie-directions", "true"});
  CHECK(r.code == cli::kExitOk);
}

TEST_CASE("config files parse and flags override them") {
  const auto kv = cli::parse_config_text("# comment\n a = 1 \nb=two # trailing\n\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "two");
  CHECK_THROWS(cli::parse_config_text("just words\n"));

  const fs::path dir = fresh_dir("config");
  fs::create_directories(dir);
  const fs::path cfg = dir / "data.cfg";
  io::write_file(cfg.string(),
                 "n_train = 10\nn_val = 4\nn_test = 3\nimage_h = 16\nimage_w = 16\nstrength = 0.8\n");
  const fs::path out = dir / "data";
  const auto r = run({"make-data", "--config", cfg.string(), "--n-test", "5", "--seed", "2",
                      "--out", out.string()});
  REQUIRE(r.code == cli::kExitOk);
  const auto manifest = nlohmann::json::parse(io::read_file((out / "manifest.json").string()));
  CHECK(manifest["config"]["n_train"] == 10);
  CHECK(manifest["config"]["n_test"] == 5);
  CHECK(manifest["config"]["seed"] == 2);
  const std::string echo = io::read_file((out / "make-data.config").string());
  CHECK(echo.find("n_test = 5") != std::string::npos);
  CHECK(echo.find("strength = 0.8") != std::string::npos);

  // The echoed config reproduces the run.
  const fs::path out2 = dir / "data2";
  const auto r2 = run({"make-data", "--config", (out / "make-data.config").string(), "--out", out2.string()});
  REQUIRE(r2.code == cli::kExitOk);
  CHECK(io::read_file((out2 / "manifest.json").string()) ==
        io::read_file((out / "manifest.json").string()));

  io::write_file(cfg.string(), "unknown_key = 3\n");
  CHECK(run({"make-data", "--config", cfg.string(), "--out", out.string()}).code == cli::kExitUsage);
}

TEST_CASE("overwrite policy") {
  const fs::path out = fresh_dir("clobber");
  auto args = tiny_data_flags();
  args.insert(args.begin(), "make-data");
  args.push_back("--out");
  args.push_back(out.string());
  CHECK(run(args).code == cli::kExitOk);
  const auto again = run(args);
  CHECK(again.code == cli::kExitOk);
  CHECK(again.err.find("warning: overwriting") != std::string::npos);
  args.push_back("--no-clobber");
  CHECK(run(args).code == cli::kExitRuntime);
}

TEST_CASE("pipeline smoke run") {
  const fs::path root = fresh_dir("pipeline");
  const std::string data = (root / "data").string();
  auto mk = tiny_data_flags();
  mk.insert(mk.begin(), "make-data");
  mk.insert(mk.end(), {"--seed", "1", "--pgm", "--out", data});
  REQUIRE(run(mk).code == cli::kExitOk);
  CHECK(fs::exists(root / "data" / "manifest.json"));

  const std::vector<std::string> train_common{"train", "--data", data, "--epochs", "1", "--batch", "8",
                                              "--embed-dim", "8", "--depth", "1", "--seed", "7"};
  auto t1 = train_common;
  t1.insert(t1.end(), {"--out", (root / "run1").string()});
  auto t2 = train_common;
  t2.insert(t2.end(), {"--out", (root / "run2").string()});
  const auto r1 = run(t1);
  REQUIRE(r1.code == cli::kExitOk);
  REQUIRE(run(t2).code == cli::kExitOk);
  const std::string ck1 = (root / "run1" / "model.ckpt").string();
  CHECK(io::read_file(ck1) == io::read_file((root / "run2" / "model.ckpt").string()));
  CHECK(fs::exists(root / "run1" / "model.ckpt.json"));
  CHECK(fs::exists(root / "run1" / "train_log.csv"));
  CHECK(fs::exists(root / "run1" / "train.config"));

  const auto ev = run({"eval", "--checkpoint", ck1, "--data", data, "--out", (root / "eval").string()});
  REQUIRE(ev.code == cli::kExitOk);
  const auto report = nlohmann::json::parse(io::read_file((root / "eval" / "eval_report.json").string()));
  CHECK(report["schema"] == "mambadet.eval.v1");
  CHECK(report["per_subset"].size() == 4);

  const auto fx = run({"export-features", "--checkpoint", ck1, "--data", data, "--split", "val", "--out",
                       (root / "feat").string()});
  REQUIRE(fx.code == cli::kExitOk);
  const std::string csv = io::read_file((root / "feat" / "features.csv").string());
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 8);

  const fs::path missing_out = root / "never";
  const auto bad = run({"eval", "--checkpoint", (root / "nope.ckpt").string(), "--data", data, "--out",
                        missing_out.string()});
  CHECK(bad.code == cli::kExitRuntime);
  CHECK_FALSE(fs::exists(missing_out));
  CHECK(run({"export-features", "--checkpoint", ck1, "--data", data, "--split", "bogus", "--out",
             (root / "feat2").string()})
            .code == cli::kExitUsage);
}

TEST_CASE("bench-kernels cross-checks before timing") {
  const fs::path out = fresh_dir("bench");
  const auto r = run({"bench-kernels", "--lengths", "64,128", "--repeats", "1", "--out", out.string()});
  CHECK(r.code == cli::kExitOk);
  const auto j = nlohmann::json::parse(io::read_file((out / "bench.json").string()));
  CHECK(j["schema"] == "mambadet.bench.v1");
  CHECK(fs::exists(out / "bench.csv"));
  CHECK(fs::exists(out / "bench-kernels.config"));
}
