#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "checkpoint.hpp"
#include "config_io.hpp"
#include "error.hpp"
#include "labelgen.hpp"
#include "random.hpp"
#include "speckle.hpp"

namespace despeck::experiment {

namespace fs = std::filesystem;

namespace {

const char* scene_name(SceneKind k) {
  switch (k) {
    case SceneKind::Mosaic: return "mosaic";
    case SceneKind::Gradient: return "gradient";
    case SceneKind::Checkerboard: return "checkerboard";
  }
  return "mosaic";
}

SceneKind scene_from_name(const std::string& s) {
  if (s == "mosaic") return SceneKind::Mosaic;
  if (s == "gradient") return SceneKind::Gradient;
  if (s == "checkerboard") return SceneKind::Checkerboard;
  fail(ErrorCode::InvalidArgument, "unknown scene '" + s + "' (expected mosaic, gradient or checkerboard)");
}

metrics::Roi cell_roi(const SceneSpec& s) {
  const std::size_t cols = (s.width + s.cell - 1) / s.cell;
  const std::size_t rows = (s.height + s.cell - 1) / s.cell;
  const std::size_t cx = cols >= 3 ? 1 : 0;
  const std::size_t cy = rows >= 3 ? 1 : 0;
  const std::size_t cw = std::min(s.cell, s.width - cx * s.cell);
  const std::size_t ch = std::min(s.cell, s.height - cy * s.cell);
  const std::size_t inset = std::min<std::size_t>(12, std::min(cw, ch) / 4);
  return {cx * s.cell + inset, cy * s.cell + inset, cw - 2 * inset, ch - 2 * inset};
}

void save_json(const fs::path& path, const nlohmann::json& j) { write_json_file(path.string(), j); }

Image noisy_from(const Image& clean, double looks, std::uint64_t seed) {
  const auto noise = speckle::sample_speckle(clean.width(), clean.height(), {looks, speckle::Domain::Intensity}, seed);
  Image y = speckle::apply_multiplicative(clean, noise);
  y.metadata = {{"looks", looks}, {"speckle_seed", seed}};
  return y;
}

std::string stack_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%02zu", i);
  return buf;
}

nlohmann::json noise_fit_json(const Image& noise) {
  try {
    const auto fit = speckle::fit_gamma_looks(noise);
    return {{"looks_hat", fit.looks_hat}, {"mean_hat", fit.mean_hat}, {"method", fit.method}};
  } catch (const Error&) {
    return nullptr;
  }
}

std::optional<double> looks_of(const nlohmann::json& fit) {
  if (fit.is_null()) return std::nullopt;
  return fit.at("looks_hat").get<double>();
}

net::Model<float> train_model(const ExperimentSpec& spec, std::span<const train::TrainingPair> pairs,
                              const net::LossWeights& weights, train::TrainHistory* history) {
  auto cfg = spec.train;
  cfg.weights = weights;
  cfg.seed = derive_seed(spec.seed, 6);
  auto model = net::build_model<float>(spec.model, derive_seed(spec.seed, 5));
  const auto set = train::build_training_set(pairs, cfg);
  auto h = train::train_phase1(model, set, cfg);
  if (history) *history = std::move(h);
  return model;
}

train::TrainHistory finetune_model(const ExperimentSpec& spec, net::Model<float>& model, const Image& target,
                                   const net::LossWeights& weights) {
  auto cfg = spec.finetune;
  cfg.weights = weights;
  cfg.seed = derive_seed(spec.seed, 7);
  return train::finetune_phase2(model, target, cfg);
}

std::vector<train::TrainingPair> pairs_from(const SimulatedData& data, const Image& label) {
  std::vector<train::TrainingPair> pairs;
  for (const auto& img : data.stack) pairs.push_back({img, label});
  return pairs;
}

void export_views(const fs::path& dir, const Image& noisy, const train::DespeckleResult& res) {
  raster::export_png(noisy, dir / "input.png");
  raster::export_png(res.clean, dir / "x_hat.png");
  raster::export_png(res.noise, dir / "n_hat.png");
  raster::export_png_linear(metrics::ratio_stats(noisy, res.clean).ratio, dir / "ratio.png", 0.5, 1.5);
}

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  if (std::isinf(*v)) return *v > 0 ? "+inf" : "-inf";
  if (std::isnan(*v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", *v);
  return buf;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Scene make_scene(const SceneSpec& s, std::uint64_t seed) {
  require(s.width >= 3 && s.height >= 3, "scene must be at least 3x3");
  require(s.cell >= 1, "scene cell size must be >= 1");
  require(s.min_level > 0.0 && s.max_level >= s.min_level && std::isfinite(s.max_level),
          "scene levels must satisfy 0 < min_level <= max_level");

  Scene out;
  out.clean = Image(s.width, s.height);
  const double lo = std::log(s.min_level), hi = std::log(s.max_level);
  double seen_min = s.max_level, seen_max = s.min_level;

  switch (s.kind) {
    case SceneKind::Mosaic: {
      Rng rng(seed);
      const std::size_t cols = (s.width + s.cell - 1) / s.cell;
      const std::size_t rows = (s.height + s.cell - 1) / s.cell;
      std::vector<double> levels(cols * rows);
      for (auto& l : levels) l = std::exp(lo + (hi - lo) * rng.uniform());
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          out.clean.set(x, y, static_cast<float>(levels[(y / s.cell) * cols + x / s.cell]));
        }
      }
      out.roi = cell_roi(s);
      break;
    }
    case SceneKind::Gradient: {
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          const double t = static_cast<double>(x) / static_cast<double>(s.width - 1);
          out.clean.set(x, y, static_cast<float>(std::exp(lo + (hi - lo) * t)));
        }
      }
      // Narrow vertical strip: the level varies little across four columns.
      const std::size_t strip = std::min<std::size_t>(4, s.width);
      const std::size_t inset = std::min<std::size_t>(8, s.height / 4);
      out.roi = {s.width / 2 - strip / 2, inset, strip, s.height - 2 * inset};
      break;
    }
    case SceneKind::Checkerboard: {
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          const bool high = ((x / s.cell) + (y / s.cell)) % 2 == 1;
          out.clean.set(x, y, static_cast<float>(high ? s.max_level : s.min_level));
        }
      }
      out.roi = cell_roi(s);
      break;
    }
  }

  for (const float v : out.clean.data()) {
    seen_min = std::min(seen_min, static_cast<double>(v));
    seen_max = std::max(seen_max, static_cast<double>(v));
  }
  out.clean.metadata = {{"scene", scene_name(s.kind)},
                        {"min_level", seen_min},
                        {"max_level", seen_max},
                        {"cell", s.cell},
                        {"scene_seed", seed}};
  return out;
}

train::TrainConfig ExperimentSpec::desk_phase1() {
  auto c = train::TrainConfig::phase1();
  c.stride = 20;
  c.max_patches = 600;
  return c;
}

std::vector<net::LossWeights> ExperimentSpec::reference_phase2_sweep() {
  // (mu, lambda) pairs, all with xi = 1
  const std::pair<double, double> rows[] = {{1e-2, 1e-2},   {1e-2, 0.0},    {1.5e-2, 1e-5}, {1.5e-2, 1e-4}, {1.5e-2, 1e-6},
                                            {1.5e-3, 1e-6}, {1.5e-1, 1e-4}, {1.5, 1e-3},    {1e-2, 1e-4}};
  std::vector<net::LossWeights> out;
  for (const auto& [mu, lambda] : rows) out.push_back({.mu = mu, .xi = 1.0, .lambda = lambda});
  return out;
}

void ExperimentSpec::validate() const {
  require(stack_depth >= 2, "stack_depth must be >= 2 for label synthesis");
  require(looks >= 1.0 && std::isfinite(looks), "looks must be >= 1");
  require(!target_looks || (*target_looks >= 1.0 && std::isfinite(*target_looks)), "target_looks must be >= 1");
  require(nu > 0.0 && std::isfinite(nu), "nu must be positive");
  require(scene.width >= train.patch_size && scene.height >= train.patch_size,
          "scene is smaller than the training patch size");
  require(!target_looks || (scene.width >= finetune.patch_size && scene.height >= finetune.patch_size),
          "scene is smaller than the fine-tuning patch size");
  model.validate();
  train.validate();
  finetune.validate();
  require(tile > 2 * overlap, "tile must exceed twice the overlap");
}

ExperimentSpec spec_from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  if (!j.is_object()) fail(ErrorCode::Format, "experiment spec must be a JSON object");
  try {
    if (j.contains("scene")) {
      const auto& sc = j.at("scene");
      if (sc.is_string()) {
        s.scene.kind = scene_from_name(sc.get<std::string>());
      } else {
        if (sc.contains("kind")) s.scene.kind = scene_from_name(sc.at("kind").get<std::string>());
        s.scene.width = sc.value("width", s.scene.width);
        s.scene.height = sc.value("height", s.scene.height);
        s.scene.cell = sc.value("cell", s.scene.cell);
        s.scene.min_level = sc.value("min_level", s.scene.min_level);
        s.scene.max_level = sc.value("max_level", s.scene.max_level);
      }
    }
    s.looks = j.value("looks", s.looks);
    s.stack_depth = j.value("stack_depth", s.stack_depth);
    s.seed = j.value("seed", s.seed);
    s.nu = j.value("nu", s.nu);
    if (j.contains("model")) net::from_json(j.at("model"), s.model);
    if (j.contains("train")) train::from_json(j.at("train"), s.train);
    if (j.contains("target_looks")) {
      const auto& t = j.at("target_looks");
      if (t.is_null()) {
        s.target_looks.reset();
      } else {
        s.target_looks = t.get<double>();
      }
    }
    if (j.contains("finetune_preset")) {
      s.finetune = train::TrainConfig::finetune(train::preset_from_string(j.at("finetune_preset").get<std::string>()));
    }
    if (j.contains("finetune")) train::from_json(j.at("finetune"), s.finetune);
    s.tile = j.value("tile", s.tile);
    s.overlap = j.value("overlap", s.overlap);
    if (j.contains("phase1_checkpoint") && !j.at("phase1_checkpoint").is_null()) {
      s.phase1_checkpoint = j.at("phase1_checkpoint").get<std::string>();
    }
    if (j.contains("sweep_phase1")) s.sweep_phase1 = j.at("sweep_phase1").get<std::vector<net::LossWeights>>();
    if (j.contains("sweep_phase2")) s.sweep_phase2 = j.at("sweep_phase2").get<std::vector<net::LossWeights>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("malformed experiment spec: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json spec_to_json(const ExperimentSpec& s) {
  nlohmann::json j;
  j["scene"] = {{"kind", scene_name(s.scene.kind)}, {"width", s.scene.width},         {"height", s.scene.height},
                {"cell", s.scene.cell},             {"min_level", s.scene.min_level}, {"max_level", s.scene.max_level}};
  j["looks"] = s.looks;
  j["stack_depth"] = s.stack_depth;
  j["seed"] = s.seed;
  j["nu"] = s.nu;
  j["model"] = s.model;
  j["train"] = s.train;
  j["target_looks"] = s.target_looks ? nlohmann::json(*s.target_looks) : nlohmann::json(nullptr);
  j["finetune"] = s.finetune;
  j["tile"] = s.tile;
  j["overlap"] = s.overlap;
  j["phase1_checkpoint"] = s.phase1_checkpoint ? nlohmann::json(*s.phase1_checkpoint) : nlohmann::json(nullptr);
  j["sweep_phase1"] = s.sweep_phase1;
  j["sweep_phase2"] = s.sweep_phase2;
  return j;
}

SimulatedData simulate_data(const ExperimentSpec& spec) {
  spec.validate();
  SimulatedData d;
  auto scene = make_scene(spec.scene, derive_seed(spec.seed, 1));
  d.clean = std::move(scene.clean);
  d.roi = scene.roi;
  for (std::size_t i = 0; i < spec.stack_depth; ++i) {
    d.stack.push_back(noisy_from(d.clean, spec.looks, derive_seed(spec.seed, 100 + i)));
  }
  d.test_noisy = noisy_from(d.clean, spec.looks, derive_seed(spec.seed, 2));
  if (spec.target_looks) {
    auto target = make_scene(spec.scene, derive_seed(spec.seed, 3));
    d.target_noisy = noisy_from(target.clean, *spec.target_looks, derive_seed(spec.seed, 4));
    d.target_clean = std::move(target.clean);
    d.target_roi = target.roi;
  }
  return d;
}

void write_simulation(const SimulatedData& d, const fs::path& dir) {
  fs::create_directories(dir / "stack");
  raster::save_raster(d.clean, dir / "clean.rawf32");
  for (std::size_t i = 0; i < d.stack.size(); ++i) {
    raster::save_raster(d.stack[i], dir / "stack" / (stack_name(i) + ".rawf32"));
  }
  raster::save_raster(d.test_noisy, dir / "test_noisy.rawf32");
  nlohmann::json manifest = {{"roi", d.roi}, {"stack_depth", d.stack.size()}, {"target", nullptr}};
  if (d.target_clean && d.target_noisy) {
    raster::save_raster(*d.target_clean, dir / "target_clean.rawf32");
    raster::save_raster(*d.target_noisy, dir / "target_noisy.rawf32");
    manifest["target"] = {{"roi", d.target_roi}};
  }
  save_json(dir / "simulation.json", manifest);
}

SimulatedData read_simulation(const fs::path& dir) {
  const auto manifest = read_json_file((dir / "simulation.json").string());
  SimulatedData d;
  d.clean = raster::load_raster(dir / "clean.rawf32");
  d.roi = manifest.at("roi").get<metrics::Roi>();
  d.stack = labelgen::load_stack(dir / "stack").images();
  d.test_noisy = raster::load_raster(dir / "test_noisy.rawf32");
  if (!manifest.at("target").is_null()) {
    d.target_clean = raster::load_raster(dir / "target_clean.rawf32");
    d.target_noisy = raster::load_raster(dir / "target_noisy.rawf32");
    d.target_roi = manifest.at("target").at("roi").get<metrics::Roi>();
  }
  return d;
}

std::vector<train::TrainingPair> load_training_pairs(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, "training pair directory not found: " + dir.string());
  std::vector<fs::path> noisy;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    const std::string suffix = "_noisy.rawf32";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      noisy.push_back(e.path());
    }
  }
  if (noisy.empty()) fail(ErrorCode::InvalidArgument, "no *_noisy.rawf32 files in " + dir.string());
  std::sort(noisy.begin(), noisy.end());

  std::optional<Image> shared;
  std::vector<train::TrainingPair> pairs;
  for (const auto& p : noisy) {
    const auto name = p.filename().string();
    const auto stem = name.substr(0, name.size() - std::string("_noisy.rawf32").size());
    const auto own = dir / (stem + "_label.rawf32");
    Image label;
    if (fs::exists(own)) {
      label = raster::load_raster(own);
    } else {
      if (!shared) {
        const auto common = dir / "label.rawf32";
        if (!fs::exists(common)) fail(ErrorCode::Io, "no label for " + name + " and no label.rawf32 in " + dir.string());
        shared = raster::load_raster(common);
      }
      label = *shared;
    }
    Image y = raster::load_raster(p);
    if (!raster::same_shape(y, label)) fail(ErrorCode::InvalidArgument, "label shape differs from " + name);
    pairs.push_back({std::move(y), std::move(label)});
  }
  return pairs;
}

nlohmann::json evaluate_estimate(const train::DespeckleResult& result, const Image& noisy, const Image* clean,
                                 const metrics::Roi& roi) {
  const auto report = metrics::full_report(result.clean, clean, noisy, roi);
  return {{"metrics", metrics::to_json(report)},
          {"noise_fit", noise_fit_json(result.noise)},
          {"clamped", result.clamped},
          {"normalization_scale", result.normalization.scale}};
}

namespace {

nlohmann::json noisy_baseline(const Image& noisy, const Image& clean, const metrics::Roi& roi) {
  nlohmann::json j = {{"psnr", metrics::number_to_json(metrics::psnr(noisy, clean))},
                      {"ssim", metrics::number_to_json(metrics::ssim(noisy, clean))},
                      {"enl", metrics::number_to_json(metrics::enl(noisy, roi))},
                      {"cx", metrics::number_to_json(metrics::cx(noisy, roi))}};
  const auto perfect = metrics::ratio_stats(noisy, clean);
  j["reference_mor"] = perfect.mor;
  j["reference_vor"] = perfect.vor;
  return j;
}

double metric(const nlohmann::json& eval, const char* key) {
  const auto v = metrics::number_from_json(eval.at("metrics").at(key));
  if (!v) fail(ErrorCode::Internal, std::string("metric missing from report: ") + key);
  return *v;
}

}  // namespace

nlohmann::json run_experiment(const ExperimentSpec& spec, const fs::path& out) {
  spec.validate();
  fs::create_directories(out);
  save_json(out / "spec.json", spec_to_json(spec));

  // simulate
  const fs::path sim_dir = out / "simulation";
  write_simulation(simulate_data(spec), sim_dir);

  // synthesize-label
  const fs::path pairs_dir = out / "pairs";
  fs::create_directories(pairs_dir);
  nlohmann::json label_info;
  {
    const auto stack = labelgen::load_stack(sim_dir / "stack");
    const auto label = labelgen::synthesize_label(stack, spec.nu);
    raster::save_raster(label, pairs_dir / "label.rawf32");
    for (std::size_t i = 0; i < stack.depth(); ++i) {
      raster::save_raster(stack.images()[i], pairs_dir / (stack_name(i) + "_noisy.rawf32"));
    }
    const auto manifest = read_json_file((sim_dir / "simulation.json").string());
    const auto roi = manifest.at("roi").get<metrics::Roi>();
    label_info = {{"threshold", spec.nu},
                  {"valid_fraction", static_cast<double>(label.valid_count()) / static_cast<double>(label.size())},
                  {"residual_enl", metrics::number_to_json(labelgen::residual_enl(label, roi))}};
    raster::export_png(label, pairs_dir / "label.png");
  }
  save_json(out / "label.json", label_info);

  // extract-patches
  {
    const auto pairs = load_training_pairs(pairs_dir);
    const auto set = train::build_training_set(pairs, spec.train);
    save_json(out / "patches.json", {{"patch_size", set.patch_size},
                                     {"stride", set.stride},
                                     {"windows_total", set.windows_total},
                                     {"windows_dropped", set.windows_dropped},
                                     {"patches", set.patches.size()}});
  }

  // train (phase 1)
  const fs::path phase1_path = out / "model_phase1.ckpt";
  nlohmann::json train_info;
  if (spec.phase1_checkpoint) {
    auto model = net::load_checkpoint(*spec.phase1_checkpoint);
    net::save_checkpoint(model, phase1_path);
    train_info = {{"reused", *spec.phase1_checkpoint}};
  } else {
    const auto pairs = load_training_pairs(pairs_dir);
    train::TrainHistory hist;
    auto model = train_model(spec, pairs, spec.train.weights, &hist);
    net::save_checkpoint(model, phase1_path);
    train_info = hist;
  }
  save_json(out / "training.json", train_info);

  // despeckle + evaluate the in-distribution test image
  nlohmann::json report;
  {
    const fs::path dir = out / "test";
    fs::create_directories(dir);
    auto model = net::load_checkpoint(phase1_path);
    const auto noisy = raster::load_raster(sim_dir / "test_noisy.rawf32");
    const auto res = train::despeckle(model, noisy, spec.tile, spec.overlap);
    raster::save_raster(res.clean, dir / "x_hat.rawf32");
    raster::save_raster(res.noise, dir / "n_hat.rawf32");
    export_views(dir, noisy, res);

    const auto clean = raster::load_raster(sim_dir / "clean.rawf32");
    const auto roi = read_json_file((sim_dir / "simulation.json").string()).at("roi").get<metrics::Roi>();
    const auto baseline = noisy_baseline(noisy, clean, roi);
    const auto eval = evaluate_estimate(res, noisy, &clean, roi);
    const double psnr_gain = metric(eval, "psnr") - *metrics::number_from_json(baseline.at("psnr"));
    const double enl_ratio = metric(eval, "enl") / *metrics::number_from_json(baseline.at("enl"));
    report["phase1"] = {{"roi", roi},
                        {"noisy", baseline},
                        {"despeckled", eval},
                        {"psnr_gain_db", metrics::number_to_json(psnr_gain)},
                        {"enl_ratio", metrics::number_to_json(enl_ratio)}};
    save_json(dir / "report.json", report["phase1"]);
  }

  // finetune (phase 2) on the mismatched-looks target
  if (spec.target_looks) {
    const fs::path dir = out / "target";
    fs::create_directories(dir / "unadapted");
    fs::create_directories(dir / "tuned");
    const auto noisy = raster::load_raster(sim_dir / "target_noisy.rawf32");
    const auto clean = raster::load_raster(sim_dir / "target_clean.rawf32");
    const auto roi =
        read_json_file((sim_dir / "simulation.json").string()).at("target").at("roi").get<metrics::Roi>();

    auto model = net::load_checkpoint(phase1_path);
    const auto before = train::despeckle(model, noisy, spec.tile, spec.overlap);
    raster::save_raster(before.clean, dir / "unadapted" / "x_hat.rawf32");
    raster::save_raster(before.noise, dir / "unadapted" / "n_hat.rawf32");
    export_views(dir / "unadapted", noisy, before);

    const auto hist = finetune_model(spec, model, noisy, spec.finetune.weights);
    net::save_checkpoint(model, out / "model_phase2.ckpt");
    save_json(dir / "finetune.json", hist);

    auto tuned_model = net::load_checkpoint(out / "model_phase2.ckpt");
    const auto after = train::despeckle(tuned_model, noisy, spec.tile, spec.overlap);
    raster::save_raster(after.clean, dir / "tuned" / "x_hat.rawf32");
    raster::save_raster(after.noise, dir / "tuned" / "n_hat.rawf32");
    export_views(dir / "tuned", noisy, after);

    const auto e0 = evaluate_estimate(before, noisy, &clean, roi);
    const auto e1 = evaluate_estimate(after, noisy, &clean, roi);
    const double enl_gain = metric(e1, "enl") / metric(e0, "enl") - 1.0;
    nlohmann::json looks_moved = nullptr;
    const auto l0 = looks_of(e0.at("noise_fit")), l1 = looks_of(e1.at("noise_fit"));
    if (l0 && l1) looks_moved = std::abs(*l1 - *spec.target_looks) < std::abs(*l0 - *spec.target_looks);
    report["phase2"] = {{"roi", roi},
                        {"target_looks", *spec.target_looks},
                        {"noisy", noisy_baseline(noisy, clean, roi)},
                        {"unadapted", e0},
                        {"tuned", e1},
                        {"finetune_iterations", hist.iterations},
                        {"early_stopped", hist.early_stopped},
                        {"enl_gain", metrics::number_to_json(enl_gain)},
                        {"noise_looks_toward_target", looks_moved}};
    save_json(dir / "report.json", report["phase2"]);
  }

  save_json(out / "report.json", report);
  return report;
}

AblationMode ablation_mode_from_string(const std::string& name) {
  if (name == "phase1-only") return AblationMode::Phase1Only;
  if (name == "phase2-only") return AblationMode::Phase2Only;
  if (name == "phases") return AblationMode::Phases;
  if (name == "weight-sweep") return AblationMode::WeightSweep;
  fail(ErrorCode::InvalidArgument,
       "unknown ablation mode '" + name + "' (expected phase1-only, phase2-only, phases or weight-sweep)");
}

std::string AblationTable::to_csv() const {
  std::ostringstream os;
  os << "label,phase,mu,lambda,xi,psnr,ssim,dg,epi,enl,cx,mor,vor,noise_looks\n";
  for (const auto& r : rows) {
    const auto& m = r.report;
    os << r.label << ',' << r.phase << ',' << csv_number(r.weights.mu) << ',' << csv_number(r.weights.lambda) << ','
       << csv_number(r.weights.xi) << ',' << csv_number(m.psnr) << ',' << csv_number(m.ssim) << ','
       << csv_number(m.dg) << ',' << csv_number(m.epi) << ',' << csv_number(m.enl) << ',' << csv_number(m.cx) << ','
       << csv_number(m.mor) << ',' << csv_number(m.vor) << ',' << csv_number(r.noise_looks) << '\n';
  }
  return os.str();
}

nlohmann::json AblationTable::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({{"label", r.label},
                   {"phase", r.phase},
                   {"weights", r.weights},
                   {"metrics", metrics::to_json(r.report)},
                   {"noise_looks", r.noise_looks ? metrics::number_to_json(*r.noise_looks) : nlohmann::json(nullptr)}});
  }
  return {{"rows", arr}};
}

AblationTable ablate(const ExperimentSpec& spec, AblationMode mode, const fs::path& out) {
  spec.validate();
  if (!spec.target_looks) fail(ErrorCode::InvalidArgument, "ablation needs a target image (target_looks)");
  fs::create_directories(out);

  const auto data = simulate_data(spec);
  const auto& target = *data.target_noisy;
  const auto& target_clean = *data.target_clean;

  std::optional<net::Model<float>> base;
  std::vector<train::TrainingPair> pairs;
  auto ensure_pairs = [&] {
    if (pairs.empty()) {
      const labelgen::TemporalStack stack(data.stack);
      pairs = pairs_from(data, labelgen::synthesize_label(stack, spec.nu));
    }
  };
  auto base_model = [&]() -> net::Model<float>& {
    if (!base) {
      if (spec.phase1_checkpoint) {
        base = net::load_checkpoint(*spec.phase1_checkpoint);
      } else {
        ensure_pairs();
        base = train_model(spec, pairs, spec.train.weights, nullptr);
      }
    }
    return *base;
  };

  auto row_on = [&](std::string label, int phase, const net::LossWeights& w, net::Model<float>& m,
                    const Image& noisy, const Image& clean, const metrics::Roi& roi) {
    const auto res = train::despeckle(m, noisy, spec.tile, spec.overlap);
    AblationRow r;
    r.label = std::move(label);
    r.phase = phase;
    r.weights = w;
    r.report = metrics::full_report(res.clean, &clean, noisy, roi);
    r.noise_looks = looks_of(noise_fit_json(res.noise));
    return r;
  };
  auto on_target = [&](std::string label, int phase, const net::LossWeights& w, net::Model<float>& m) {
    return row_on(std::move(label), phase, w, m, target, target_clean, data.target_roi);
  };

  AblationTable table;
  const bool want_p1 = mode == AblationMode::Phase1Only || mode == AblationMode::Phases;
  const bool want_p2 = mode == AblationMode::Phase2Only || mode == AblationMode::Phases;

  if (want_p1) table.rows.push_back(on_target("phase1-only", 1, spec.train.weights, base_model()));
  if (want_p2) {
    auto fresh = net::build_model<float>(spec.model, derive_seed(spec.seed, 5));
    finetune_model(spec, fresh, target, spec.finetune.weights);
    table.rows.push_back(on_target("phase2-only", 2, spec.finetune.weights, fresh));
  }
  if (mode == AblationMode::Phases) {
    auto combined = net::cast_model<float, float>(base_model());
    finetune_model(spec, combined, target, spec.finetune.weights);
    table.rows.push_back(on_target("phase1+2", 2, spec.finetune.weights, combined));
  }
  if (mode == AblationMode::WeightSweep) {
    for (const auto& w : spec.sweep_phase1) {
      const bool reuse = w.mu == spec.train.weights.mu && w.xi == spec.train.weights.xi &&
                         w.lambda == spec.train.weights.lambda;
      if (reuse) {
        table.rows.push_back(row_on("phase1", 1, w, base_model(), data.test_noisy, data.clean, data.roi));
      } else {
        ensure_pairs();
        auto m = train_model(spec, pairs, w, nullptr);
        table.rows.push_back(row_on("phase1", 1, w, m, data.test_noisy, data.clean, data.roi));
      }
    }
    for (const auto& w : spec.sweep_phase2) {
      auto m = net::cast_model<float, float>(base_model());
      finetune_model(spec, m, target, w);
      table.rows.push_back(on_target("phase2", 2, w, m));
    }
  }

  const std::string stem = std::string("ablation_") +
                           (mode == AblationMode::Phase1Only   ? "phase1-only"
                            : mode == AblationMode::Phase2Only ? "phase2-only"
                            : mode == AblationMode::Phases     ? "phases"
                                                               : "weight-sweep");
  {
    std::ofstream csv(out / (stem + ".csv"), std::ios::trunc);
    if (!csv) fail(ErrorCode::Io, "cannot write " + (out / (stem + ".csv")).string());
    csv << table.to_csv();
  }
  save_json(out / (stem + ".json"), table.to_json());
  return table;
}

}  // namespace despeck::experiment
