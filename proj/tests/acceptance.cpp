#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "experiment.hpp"
#include "gradcheck_cases.hpp"
#include "metrics.hpp"
#include "raster.hpp"
#include "random.hpp"
#include "speckle.hpp"
#include "training.hpp"

namespace fs = std::filesystem;
using namespace despeck;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(const char* id, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << id << ' ' << detail << std::endl;
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double num(const nlohmann::json& j) { return *metrics::number_from_json(j); }

void ac1_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
  auto take = [&](const std::string& prefix, const std::vector<gradcases::NamedCheck>& checks) {
    for (const auto& c : checks) {
      checked += c.result.checked;
      if (!(c.result.max_rel_error <= worst)) {
        worst = c.result.max_rel_error;
        worst_name = prefix + c.name;
      }
    }
  };
  take("op:", gradcases::op_checks(2024));
  for (int phase : {1, 2}) {
    take("net" + std::to_string(phase) + ":", gradcases::network_checks(net::ModelConfig::desk(), 2, 8, phase, 77));
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "gradient checks: max rel error " << worst << " (" << worst_name << "), " << checked
    << " elements, " << fmt("%.1f", secs) << " s";
  verdict("AC1", worst < 1e-4 && checked > 0 && secs < 60.0, d.str());
}

void ac2_speckle() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream d;
  d << "speckle stats:";
  for (double looks : {1.0, 5.0}) {
    const auto n = speckle::sample_speckle(1000, 1000, {.looks = looks}, 9000 + static_cast<std::uint64_t>(looks));
    double s = 0.0, s2 = 0.0;
    for (float v : n.data()) {
      s += v;
      s2 += static_cast<double>(v) * v;
    }
    const double count = static_cast<double>(n.size());
    const double mean = s / count;
    const double var = (s2 - count * mean * mean) / (count - 1.0);
    const auto fit = speckle::fit_gamma_looks(n);
    const bool pass = std::abs(mean - 1.0) < 0.01 && std::abs(var * looks - 1.0) < 0.03 &&
                      std::abs(fit.looks_hat / looks - 1.0) < 0.03;
    ok = ok && pass;
    d << " L=" << looks << " mean " << fmt("%.4f", mean) << " var*L " << fmt("%.4f", var * looks) << " L_hat "
      << fmt("%.3f", fit.looks_hat) << ';';
  }
  const double secs = seconds_since(t0);
  d << ' ' << fmt("%.1f", secs) << " s";
  verdict("AC2", ok && secs < 30.0, d.str());
}

void ac3_metrics() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::ostringstream d;

  Rng rng(31);
  raster::Image a(64, 64);
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) a.set(x, y, static_cast<float>(0.05 + 0.1 * ((x / 16 + y / 16) % 2) + 0.01 * rng.uniform()));
  }
  const double s = metrics::ssim(a, a);
  const double e = metrics::epi(a, a).epi;
  ok = ok && s == 1.0 && e == 1.0;
  d << "SSIM(a,a) " << s << ", EPI(a,a) " << e;

  const auto homog = speckle::sample_speckle(100, 100, {.looks = 5.0}, 4242);
  const metrics::Roi whole{0, 0, 100, 100};
  const double enl = metrics::enl(homog, whole), cx = metrics::cx(homog, whole);
  ok = ok && std::abs(cx * cx * enl - 1.0) < 1e-12 && std::abs(enl - 5.0) <= 0.3;
  d << ", cx^2*enl-1 " << (cx * cx * enl - 1.0) << ", ENL " << fmt("%.3f", enl);

  raster::Image clean(256, 256);
  for (std::size_t y = 0; y < 256; ++y) {
    for (std::size_t x = 0; x < 256; ++x) clean.set(x, y, static_cast<float>(x < 128 ? 0.02 : 0.1));
  }
  const auto y = speckle::apply_multiplicative(clean, speckle::sample_speckle(256, 256, {.looks = 5.0}, 777));
  const auto r = metrics::ratio_stats(y, clean);
  ok = ok && std::abs(r.mor - 1.0) <= 0.01 && std::abs(r.vor - 0.2) <= 0.01;
  d << ", MoR " << fmt("%.4f", r.mor) << " VoR " << fmt("%.4f", r.vor);

  const double secs = seconds_since(t0);
  d << ", " << fmt("%.1f", secs) << " s";
  verdict("AC3", ok && secs < 30.0, d.str());
}

struct RunOutcome {
  nlohmann::json report;
  double seconds = 0.0;
  bool ok = false;
};

RunOutcome ac4_phase1(const experiment::ExperimentSpec& spec, const fs::path& dir) {
  RunOutcome out;
  const auto t0 = Clock::now();
  try {
    out.report = experiment::run_experiment(spec, dir);
    out.ok = true;
  } catch (const std::exception& ex) {
    verdict("AC4", false, std::string("experiment failed: ") + ex.what());
    return out;
  }
  out.seconds = seconds_since(t0);
  const auto& p1 = out.report.at("phase1");
  const double gain = num(p1.at("psnr_gain_db"));
  const double ratio = num(p1.at("enl_ratio"));
  std::ostringstream d;
  d << "phase 1: PSNR gain " << fmt("%.2f", gain) << " dB, ENL ratio " << fmt("%.2f", ratio) << ", full run "
    << fmt("%.0f", out.seconds) << " s";
  verdict("AC4", gain >= 3.0 && ratio >= 5.0 && out.seconds < 900.0, d.str());
  return out;
}

void ac5_phase2(const experiment::ExperimentSpec& spec, const fs::path& dir, const nlohmann::json& report) {
  const auto& p2 = report.at("phase2");
  const double gain = num(p2.at("enl_gain"));
  const double l0 = p2.at("unadapted").at("noise_fit").at("looks_hat").get<double>();
  const double l1 = p2.at("tuned").at("noise_fit").at("looks_hat").get<double>();

  const auto t0 = Clock::now();
  auto model = net::load_checkpoint(dir / "model_phase1.ckpt");
  const auto target = raster::load_raster(dir / "simulation" / "target_noisy.rawf32");
  auto cfg = spec.finetune;
  cfg.seed = experiment::derive_seed(spec.seed, 7);
  train::finetune_phase2(model, target, cfg);
  const auto tuned = train::despeckle(model, target, spec.tile, spec.overlap);
  const double secs = seconds_since(t0);
  const auto bytes = net::serialize_checkpoint(model);
  const auto file = bytes_of(dir / "model_phase2.ckpt");
  const bool same = std::equal(bytes.begin(), bytes.end(), file.begin(), file.end(),
                               [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); });

  std::ostringstream d;
  d << "phase 2: ENL gain " << fmt("%.1f", 100.0 * gain) << "%, L_hat " << fmt("%.2f", l0) << " -> "
    << fmt("%.2f", l1) << ", fine-tune " << fmt("%.1f", secs) << " s" << (same ? "" : ", rerun differs");
  verdict("AC5", gain >= 0.25 && std::abs(l1 - 1.0) < std::abs(l0 - 1.0) && secs < 300.0 && same &&
                     tuned.clean.width() == target.width(),
          d.str());
}

bool same_weights(const net::LossWeights& a, double mu, double xi, double lambda) {
  return a.mu == mu && a.xi == xi && a.lambda == lambda;
}

void ac6_ablation(experiment::ExperimentSpec spec, const fs::path& dir) {
  spec.phase1_checkpoint = (dir / "model_phase1.ckpt").string();
  const auto t0 = Clock::now();
  experiment::AblationTable phases, sweep;
  try {
    phases = experiment::ablate(spec, experiment::AblationMode::Phases, dir / "ablation");
    sweep = experiment::ablate(spec, experiment::AblationMode::WeightSweep, dir / "ablation");
  } catch (const std::exception& ex) {
    verdict("AC6", false, std::string("ablation failed: ") + ex.what());
    return;
  }
  const double secs = seconds_since(t0);

  const auto enl_of = [&](const char* label) {
    for (const auto& r : phases.rows) {
      if (r.label == label) return r.report.enl.value_or(std::nan(""));
    }
    return std::nan("");
  };
  const double e1 = enl_of("phase1-only"), e2 = enl_of("phase2-only"), e12 = enl_of("phase1+2");

  const experiment::AblationRow* slc = nullptr;
  const experiment::AblationRow* heavy = nullptr;
  bool has_phase1_row = false, has_grd_row = false;
  for (const auto& r : sweep.rows) {
    if (r.phase == 1 && same_weights(r.weights, 1.0, 1e-2, 0.0)) has_phase1_row = true;
    if (r.phase == 2 && same_weights(r.weights, 1e-2, 1.0, 0.0)) has_grd_row = true;
    if (r.phase == 2 && same_weights(r.weights, 1e-2, 1.0, 1e-4)) slc = &r;
    if (r.phase == 2 && r.weights.mu >= 1.0) heavy = &r;
  }
  bool degrades = false;
  std::ostringstream d;
  d << "ablation: ENL phase1 " << fmt("%.2f", e1) << ", phase2 " << fmt("%.2f", e2) << ", combined "
    << fmt("%.2f", e12);
  if (slc && heavy) {
    const double p0 = slc->report.psnr.value_or(std::nan("")), p1 = heavy->report.psnr.value_or(std::nan(""));
    const double g0 = slc->report.dg.value_or(std::nan("")), g1 = heavy->report.dg.value_or(std::nan(""));
    degrades = p1 < p0 && g1 < g0;
    d << "; mu2=" << heavy->weights.mu << " PSNR " << fmt("%.2f", p1) << " vs " << fmt("%.2f", p0) << ", DG "
      << fmt("%.2f", g1) << " vs " << fmt("%.2f", g0);
  } else {
    d << "; weight rows missing";
  }
  d << ", " << fmt("%.0f", secs) << " s";
  verdict("AC6", e12 >= e1 && e12 >= e2 && has_phase1_row && has_grd_row && degrades && secs < 1200.0, d.str());
}

void ac7_determinism(const experiment::ExperimentSpec& spec, const fs::path& dir) {
  bool ok = true;
  std::ostringstream d;

  const auto pairs = experiment::load_training_pairs(dir / "pairs");
  auto cfg = spec.train;
  cfg.seed = experiment::derive_seed(spec.seed, 6);
  auto model = net::build_model<float>(spec.model, experiment::derive_seed(spec.seed, 5));
  train::train_phase1(model, train::build_training_set(pairs, cfg), cfg);
  const auto retrained = net::serialize_checkpoint(model);
  const auto file = bytes_of(dir / "model_phase1.ckpt");
  const bool ckpt_same = std::equal(retrained.begin(), retrained.end(), file.begin(), file.end(),
                                    [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); });
  ok = ok && ckpt_same;
  d << "retrained checkpoint " << (ckpt_same ? "identical" : "differs");

  const auto loaded = net::load_checkpoint(dir / "model_phase1.ckpt");
  const bool ckpt_rt = net::serialize_checkpoint(loaded) == retrained;
  ok = ok && ckpt_rt;
  d << ", checkpoint round trip " << (ckpt_rt ? "exact" : "differs");

  const auto noisy = raster::load_raster(dir / "simulation" / "test_noisy.rawf32");
  raster::save_raster(noisy, dir / "roundtrip.rawf32");
  const bool raster_rt = bytes_of(dir / "roundtrip.rawf32") == bytes_of(dir / "simulation" / "test_noisy.rawf32") &&
                         raster::load_raster(dir / "roundtrip.rawf32") == noisy;
  ok = ok && raster_rt;
  d << ", raster round trip " << (raster_rt ? "exact" : "differs");

  auto m = net::load_checkpoint(dir / "model_phase1.ckpt");
  const auto crop = noisy.crop(64, 64, 128, 128);
  const auto whole = train::despeckle(m, crop, 512, 32);
  const auto tiled = train::despeckle(m, crop, 64, 16);
  double worst = 0.0;
  for (std::size_t y = 16; y < 112; ++y) {
    for (std::size_t x = 16; x < 112; ++x) {
      const double a = whole.clean(x, y), b = tiled.clean(x, y);
      worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), 1e-12));
    }
  }
  ok = ok && worst < 1e-5;
  d << ", tiled vs whole max rel " << worst;
  verdict("AC7", ok, d.str());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_run");
  fs::remove_all(dir);
  fs::create_directories(dir);

  ac1_gradients();
  ac2_speckle();
  ac3_metrics();

  const experiment::ExperimentSpec spec;
  const auto run = ac4_phase1(spec, dir);
  if (run.ok) {
    ac5_phase2(spec, dir, run.report);
    ac6_ablation(spec, dir);
    ac7_determinism(spec, dir);
  } else {
    for (const char* id : {"AC5", "AC6", "AC7"}) verdict(id, false, "skipped: experiment run failed");
  }

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
