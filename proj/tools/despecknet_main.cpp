// despecknet command-line front end over the C API.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "despecknet/despecknet.h"

namespace {

using json = nlohmann::json;

struct Failure {
  dsn_status status;
  std::string message;
};

void check(dsn_status s) {
  if (s != DSN_OK) throw Failure{s, dsn_last_error()};
}

[[noreturn]] void usage_error(const std::string& message) { throw Failure{DSN_ERR_INVALID_ARGUMENT, message}; }

struct ImageDeleter {
  void operator()(dsn_image* p) const { dsn_image_free(p); }
};
struct ModelDeleter {
  void operator()(dsn_model* p) const { dsn_model_free(p); }
};
struct StringDeleter {
  void operator()(char* p) const { dsn_string_free(p); }
};
using ImagePtr = std::unique_ptr<dsn_image, ImageDeleter>;
using ModelPtr = std::unique_ptr<dsn_model, ModelDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

ImagePtr load_image(const std::string& path) {
  dsn_image* img = nullptr;
  check(dsn_image_load(path.c_str(), &img));
  return ImagePtr(img);
}

ModelPtr load_model(const std::string& path) {
  dsn_model* m = nullptr;
  check(dsn_model_load(path.c_str(), &m));
  return ModelPtr(m);
}

json take_json(char* raw) {
  StringPtr owned(raw);
  return raw ? json::parse(raw) : json(nullptr);
}

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw Failure{DSN_ERR_IO, "cannot open config file: " + path};
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Failure{DSN_ERR_FORMAT, "malformed config " + path + ": " + e.what()};
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Failure{DSN_ERR_IO, "cannot write " + path};
  out << j.dump(2) << '\n';
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

json parse_list(const std::string& text, std::size_t n, const char* what) {
  json out = json::array();
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      usage_error(std::string("malformed ") + what + ": '" + text + "'");
    }
  }
  if (out.size() != n) usage_error(std::string("malformed ") + what + ": '" + text + "'");
  return out;
}

// Options shared by every subcommand.
struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--out", c.out, out_help);
}

json config_with_seed(const Common& c) {
  json cfg = read_config(c.config);
  if (c.seed) cfg["seed"] = *c.seed;
  return cfg;
}

std::string require_out(const Common& c, const char* cmd) {
  if (c.out.empty()) usage_error(std::string(cmd) + ": --out is required");
  return c.out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SAR despeckling with a two-branch multiplicative network"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dsn_version()));

  Common c;

  auto* simulate = app.add_subcommand("simulate", "Simulate a clean scene, a speckle stack and test images");
  add_common(simulate, c, "Output directory");

  std::string stack_dir, std_out;
  double nu = 0.1;
  bool png = false;
  auto* label = app.add_subcommand("synthesize-label", "Temporal-average label from a co-registered stack");
  add_common(label, c, "Output label raster (.rawf32)");
  label->add_option("--stack", stack_dir, "Directory of co-registered rasters")->required();
  label->add_option("--nu", nu, "Temporal standard-deviation threshold");
  label->add_option("--std-out", std_out, "Also write the temporal standard deviation raster");
  label->add_flag("--png", png, "Also write a PNG preview next to each raster");

  std::string patches_dir;
  auto* extract = app.add_subcommand("extract-patches", "Summarize the patch set of a training-pair directory");
  add_common(extract, c, "Summary JSON path (stdout when omitted)");
  extract->add_option("--patches", patches_dir, "Training-pair directory")->required();

  std::string init_model;
  auto* train = app.add_subcommand("train", "Supervised phase-1 training");
  add_common(train, c, "Output checkpoint");
  train->add_option("--patches", patches_dir, "Training-pair directory")->required();
  train->add_option("--init", init_model, "Start from an existing checkpoint instead of a fresh model");

  std::string model_path, image_path, preset = "slc";
  auto* finetune = app.add_subcommand("finetune", "Unsupervised phase-2 fine-tuning on a target image");
  add_common(finetune, c, "Output checkpoint");
  finetune->add_option("--model", model_path, "Input checkpoint")->required();
  finetune->add_option("--image", image_path, "Target image (.rawf32)")->required();
  finetune->add_option("--preset", preset, "Fine-tuning preset")->check(CLI::IsMember({"grd", "slc"}));

  std::string out_clean, out_noise;
  std::size_t tile = 0, overlap = 0;
  auto* despeckle = app.add_subcommand("despeckle", "Despeckle an image with a trained model");
  add_common(despeckle, c, "Output directory for x_hat.rawf32 and n_hat.rawf32");
  despeckle->add_option("--model", model_path, "Checkpoint")->required();
  despeckle->add_option("--image", image_path, "Noisy image (.rawf32)")->required();
  despeckle->add_option("--out-clean", out_clean, "Despeckled image path");
  despeckle->add_option("--out-noise", out_noise, "Estimated speckle path");
  despeckle->add_option("--tile", tile, "Tile size (0 = default)");
  despeckle->add_option("--overlap", overlap, "Tile overlap");
  despeckle->add_flag("--png", png, "Also write PNG previews");

  std::string estimate, noisy, reference, roi, site, convention = "as-printed";
  auto* evaluate = app.add_subcommand("evaluate", "Quality metrics of a despeckled estimate");
  add_common(evaluate, c, "Report JSON path (stdout when omitted)");
  evaluate->add_option("--estimate", estimate, "Despeckled image")->required();
  evaluate->add_option("--noisy", noisy, "Noisy input image")->required();
  evaluate->add_option("--reference", reference, "Clean reference image");
  evaluate->add_option("--roi", roi, "Homogeneous region x,y,w,h (whole image when omitted)");
  evaluate->add_option("--scatter-site", site, "Point-scatterer site r,c");
  evaluate->add_option("--convention", convention, "Despeckling-gain form")
      ->check(CLI::IsMember({"as-printed", "conventional"}));

  auto* fit = app.add_subcommand("fit-noise", "Gamma looks fit of a speckle image");
  add_common(fit, c, "Result JSON path (stdout when omitted)");
  fit->add_option("--image", image_path, "Speckle image (.rawf32)")->required();

  auto* run = app.add_subcommand("run-experiment", "Full synthetic experiment");
  add_common(run, c, "Output directory");

  std::string mode;
  auto* ablate = app.add_subcommand("ablate", "Ablation study on a synthetic experiment");
  add_common(ablate, c, "Output directory");
  ablate->add_option("--mode", mode, "Ablation mode")
      ->required()
      ->check(CLI::IsMember({"phase1-only", "phase2-only", "phases", "weight-sweep"}));

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return app.exit(e);
      usage_error(e.what());
    }

    if (simulate->parsed()) {
      const auto out = require_out(c, "simulate");
      char* manifest = nullptr;
      check(dsn_simulate(config_with_seed(c).dump().c_str(), out.c_str(), &manifest));
      print(take_json(manifest));
    } else if (label->parsed()) {
      const auto out = require_out(c, "synthesize-label");
      dsn_image* lab = nullptr;
      dsn_image* zstd = nullptr;
      check(dsn_synthesize_label(stack_dir.c_str(), nu, &lab, std_out.empty() ? nullptr : &zstd));
      ImagePtr lab_owned(lab), std_owned(zstd);
      check(dsn_image_save(lab, out.c_str()));
      if (png) check(dsn_image_export_png(lab, (out + ".png").c_str()));
      if (zstd) check(dsn_image_save(zstd, std_out.c_str()));
      print({{"label", out}, {"threshold", nu}});
    } else if (extract->parsed()) {
      char* summary = nullptr;
      check(dsn_extract_patches(patches_dir.c_str(), config_with_seed(c).dump().c_str(), &summary));
      const auto j = take_json(summary);
      if (c.out.empty()) {
        print(j);
      } else {
        write_json(c.out, j);
      }
    } else if (train->parsed()) {
      const auto out = require_out(c, "train");
      json cfg = config_with_seed(c);
      json model_cfg = cfg.contains("model") ? cfg["model"] : json::object();
      cfg.erase("model");
      ModelPtr model;
      if (init_model.empty()) {
        dsn_model* m = nullptr;
        check(dsn_model_create(model_cfg.dump().c_str(), c.seed.value_or(cfg.value("seed", std::uint64_t{0})), &m));
        model.reset(m);
      } else {
        model = load_model(init_model);
      }
      char* history = nullptr;
      check(dsn_train(model.get(), patches_dir.c_str(), cfg.dump().c_str(), &history));
      const auto hist = take_json(history);
      check(dsn_model_save(model.get(), out.c_str()));
      print({{"checkpoint", out}, {"history", hist}});
    } else if (finetune->parsed()) {
      const auto out = require_out(c, "finetune");
      auto model = load_model(model_path);
      const auto target = load_image(image_path);
      char* history = nullptr;
      check(dsn_finetune(model.get(), target.get(), preset.c_str(), config_with_seed(c).dump().c_str(), &history));
      const auto hist = take_json(history);
      check(dsn_model_save(model.get(), out.c_str()));
      print({{"checkpoint", out}, {"history", hist}});
    } else if (despeckle->parsed()) {
      if (!c.out.empty()) {
        std::filesystem::create_directories(c.out);
        if (out_clean.empty()) out_clean = c.out + "/x_hat.rawf32";
        if (out_noise.empty()) out_noise = c.out + "/n_hat.rawf32";
      }
      if (out_clean.empty()) usage_error("despeckle: --out-clean or --out is required");
      auto model = load_model(model_path);
      const auto input = load_image(image_path);
      dsn_image* xh = nullptr;
      dsn_image* nh = nullptr;
      char* info = nullptr;
      check(dsn_despeckle(model.get(), input.get(), tile, overlap, &xh, &nh, &info));
      ImagePtr x_owned(xh), n_owned(nh);
      auto j = take_json(info);
      check(dsn_image_save(xh, out_clean.c_str()));
      if (png) check(dsn_image_export_png(xh, (out_clean + ".png").c_str()));
      if (!out_noise.empty()) {
        check(dsn_image_save(nh, out_noise.c_str()));
        if (png) check(dsn_image_export_png(nh, (out_noise + ".png").c_str()));
      }
      j["clean"] = out_clean;
      j["noise"] = out_noise.empty() ? json(nullptr) : json(out_noise);
      print(j);
    } else if (evaluate->parsed()) {
      const auto est = load_image(estimate);
      const auto y = load_image(noisy);
      ImagePtr ref;
      if (!reference.empty()) ref = load_image(reference);
      json opts = {{"convention", convention}};
      if (!roi.empty()) {
        const auto v = parse_list(roi, 4, "ROI (expected x,y,w,h)");
        opts["roi"] = {{"x", v[0]}, {"y", v[1]}, {"width", v[2]}, {"height", v[3]}};
      }
      if (!site.empty()) {
        const auto v = parse_list(site, 2, "site (expected r,c)");
        opts["site"] = {{"row", v[0]}, {"col", v[1]}};
      }
      char* report = nullptr;
      check(dsn_evaluate(est.get(), ref.get(), y.get(), opts.dump().c_str(), &report));
      const auto j = take_json(report);
      if (c.out.empty()) {
        print(j);
      } else {
        write_json(c.out, j);
      }
    } else if (fit->parsed()) {
      const auto img = load_image(image_path);
      double looks = 0.0, mean = 0.0;
      check(dsn_fit_gamma_looks(img.get(), &looks, &mean));
      const json j = {{"looks_hat", looks}, {"mean_hat", mean}, {"method", "moments"}};
      if (c.out.empty()) {
        print(j);
      } else {
        write_json(c.out, j);
      }
    } else if (run->parsed()) {
      const auto out = require_out(c, "run-experiment");
      char* report = nullptr;
      check(dsn_run_experiment(config_with_seed(c).dump().c_str(), out.c_str(), &report));
      print(take_json(report));
    } else if (ablate->parsed()) {
      const auto out = require_out(c, "ablate");
      char* table = nullptr;
      check(dsn_ablate(config_with_seed(c).dump().c_str(), mode.c_str(), out.c_str(), &table));
      print(take_json(table));
    }
  } catch (const Failure& f) {
    const json err = {{"error", {{"code", dsn_status_string(f.status)}, {"status", static_cast<int>(f.status)},
                                 {"message", f.message}}}};
    std::cerr << err.dump() << std::endl;
    return static_cast<int>(f.status);
  } catch (const std::exception& e) {
    const json err = {{"error", {{"code", "internal"}, {"status", static_cast<int>(DSN_ERR_INTERNAL)},
                                 {"message", e.what()}}}};
    std::cerr << err.dump() << std::endl;
    return static_cast<int>(DSN_ERR_INTERNAL);
  }
  return 0;
}
