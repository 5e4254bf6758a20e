#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::current_path() / "scratch" / "cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const auto out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd = "cd '" + workdir().string() + "' && '" + DESPECKNET_CLI + "' " + args + " > '" +
                          out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinySpec = R"({
  "scene": {"kind": "checkerboard", "width": 80, "height": 80, "cell": 20, "max_level": 0.05},
  "stack_depth": 4,
  "model": {"depth": 3, "channels": 4},
  "train": {"epochs": 2, "batch_size": 16, "max_patches": 32},
  "finetune": {"batch_size": 4},
  "sweep_phase2": [{"mu": 0.01, "xi": 1, "lambda": 0.0001}, {"mu": 1.5, "xi": 1, "lambda": 0.001}]
})";

json error_of(const Result& r) { return json::parse(r.err)["error"]; }

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help").code == 0);
  CHECK(run("train --help").code == 0);

  const auto none = run("");
  CHECK(none.code == 1);
  CHECK(error_of(none)["code"] == "invalid_argument");

  const auto unknown = run("frobnicate");
  CHECK(unknown.code == 1);

  const auto bad_mode = run("ablate --mode everything --out x");
  CHECK(bad_mode.code == 1);
  CHECK(error_of(bad_mode)["status"] == 1);
}

TEST_CASE("missing inputs report machine-readable errors") {
  const auto r = run("fit-noise --image nowhere.rawf32");
  CHECK(r.code == 2);
  const auto e = error_of(r);
  CHECK(e["code"] == "io");
  CHECK(e["message"].get<std::string>().find("nowhere") != std::string::npos);

  write_file(workdir() / "broken.json", "{oops");
  const auto cfg = run("simulate --config broken.json --out sim");
  CHECK(cfg.code == 3);
  CHECK(error_of(cfg)["code"] == "format");

  const auto roi = run("evaluate --estimate a.rawf32 --noisy b.rawf32 --roi 1,2,3");
  CHECK(roi.code != 0);
}

TEST_CASE("simulate is deterministic and records scene levels") {
  write_file(workdir() / "tiny.json", kTinySpec);
  REQUIRE(run("simulate --config tiny.json --seed 3 --out simA").code == 0);
  REQUIRE(run("simulate --config tiny.json --seed 3 --out simB").code == 0);
  for (const char* f : {"clean.rawf32", "stack/t00.rawf32", "stack/t03.rawf32", "test_noisy.rawf32",
                        "target_noisy.rawf32", "simulation.json"}) {
    INFO(std::string(f));
    CHECK(slurp(workdir() / "simA" / f) == slurp(workdir() / "simB" / f));
  }
  const auto header = json::parse(slurp(workdir() / "simA" / "clean.json"));
  CHECK(header["metadata"]["scene"] == "checkerboard");
  CHECK(header["metadata"]["min_level"].get<double>() == doctest::Approx(0.01));
  CHECK(header["metadata"]["max_level"].get<double>() == doctest::Approx(0.05));

  REQUIRE(run("simulate --config tiny.json --seed 4 --out simC").code == 0);
  CHECK(slurp(workdir() / "simA" / "test_noisy.rawf32") != slurp(workdir() / "simC" / "test_noisy.rawf32"));
}

TEST_CASE("pipeline stages reproduce the experiment outputs from its files") {
  write_file(workdir() / "tiny.json", kTinySpec);
  const auto exp = run("run-experiment --config tiny.json --out exp");
  REQUIRE(exp.code == 0);
  const auto report = json::parse(exp.out);
  CHECK(report["phase1"]["despeckled"]["metrics"]["psnr"].is_number());
  const fs::path e = workdir() / "exp";

  REQUIRE(run("synthesize-label --stack exp/simulation/stack --nu 0.1 --out label.rawf32 --std-out z.rawf32 --png")
              .code == 0);
  CHECK(slurp(workdir() / "label.rawf32") == slurp(e / "pairs" / "label.rawf32"));
  CHECK(fs::exists(workdir() / "z.rawf32"));
  CHECK(fs::exists(workdir() / "label.rawf32.png"));

  REQUIRE(run("despeckle --model exp/model_phase1.ckpt --image exp/simulation/test_noisy.rawf32 --out dsp --png")
              .code == 0);
  CHECK(slurp(workdir() / "dsp" / "x_hat.rawf32") == slurp(e / "test" / "x_hat.rawf32"));
  CHECK(slurp(workdir() / "dsp" / "n_hat.rawf32") == slurp(e / "test" / "n_hat.rawf32"));

  const auto ev = run("evaluate --estimate dsp/x_hat.rawf32 --noisy exp/simulation/test_noisy.rawf32 "
                      "--reference exp/simulation/clean.rawf32 --roi 24,24,32,32 --scatter-site 10,10");
  REQUIRE(ev.code == 0);
  const auto metrics = json::parse(ev.out);
  for (const char* k : {"psnr", "ssim", "dg", "gp", "epi", "enl", "cx", "cnn_db", "mor", "vor"}) {
    INFO(std::string(k));
    CHECK(metrics.contains(k));
  }
  CHECK(metrics["psnr"] == report["phase1"]["despeckled"]["metrics"]["psnr"]);

  REQUIRE(run("evaluate --estimate dsp/x_hat.rawf32 --noisy exp/simulation/test_noisy.rawf32 --out ev.json").code ==
          0);
  CHECK(json::parse(slurp(workdir() / "ev.json"))["psnr"].is_null());

  const auto fitn = run("fit-noise --image dsp/n_hat.rawf32");
  REQUIRE(fitn.code == 0);
  CHECK(json::parse(fitn.out)["looks_hat"].get<double>() > 0.0);

  const auto ext = run("extract-patches --patches exp/pairs --config tiny.json");
  REQUIRE(ext.code == 0);
  CHECK(json::parse(ext.out)["windows_total"].get<int>() > 0);
}

TEST_CASE("train, finetune and ablate subcommands") {
  write_file(workdir() / "tiny.json", kTinySpec);
  REQUIRE(run("simulate --config tiny.json --out simT").code == 0);
  REQUIRE(run("synthesize-label --stack simT/stack --out pairsT/label.rawf32").code != 0);  // no such directory
  fs::create_directories(workdir() / "pairsT");
  REQUIRE(run("synthesize-label --stack simT/stack --out pairsT/label.rawf32").code == 0);
  fs::copy_file(workdir() / "simT" / "stack" / "t00.rawf32", workdir() / "pairsT" / "t00_noisy.rawf32");
  fs::copy_file(workdir() / "simT" / "stack" / "t00.json", workdir() / "pairsT" / "t00_noisy.json");

  write_file(workdir() / "train.json", R"({"epochs": 2, "batch_size": 8, "stride": 20, "model": {"depth": 3, "channels": 4}})");
  REQUIRE(run("train --patches pairsT --config train.json --seed 5 --out m1.ckpt").code == 0);
  REQUIRE(run("train --patches pairsT --config train.json --seed 5 --out m2.ckpt").code == 0);
  CHECK(slurp(workdir() / "m1.ckpt") == slurp(workdir() / "m2.ckpt"));

  const auto ft = run("finetune --model m1.ckpt --image simT/target_noisy.rawf32 --preset grd --out t.ckpt");
  REQUIRE(ft.code == 0);
  CHECK(json::parse(ft.out)["history"]["iterations"].get<int>() > 0);
  CHECK(run("finetune --model m1.ckpt --image simT/target_noisy.rawf32 --preset xyz --out t.ckpt").code == 1);

  const auto abl = run("ablate --config tiny.json --mode weight-sweep --out abl");
  REQUIRE(abl.code == 0);
  const auto csv = slurp(workdir() / "abl" / "ablation_weight-sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header plus three weight triples
  CHECK(csv.find("\n") != std::string::npos);
  CHECK(json::parse(abl.out)["rows"].size() == 3);
}
