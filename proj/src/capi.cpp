#include "despecknet/despecknet.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <memory>
#include <new>
#include <string>

#include "checkpoint.hpp"
#include "config_io.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "labelgen.hpp"
#include "metrics.hpp"
#include "speckle.hpp"
#include "training.hpp"

struct dsn_image {
  despeck::raster::Image img;
};

struct dsn_model {
  despeck::net::Model<float> model;
};

namespace {

using despeck::ErrorCode;

thread_local std::string g_last_error;

dsn_status to_status(ErrorCode c) { return static_cast<dsn_status>(static_cast<int>(c)); }

template <typename F>
dsn_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return DSN_OK;
  } catch (const despeck::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = std::string("JSON: ") + e.what();
    return DSN_ERR_FORMAT;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return DSN_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DSN_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DSN_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DSN_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) despeck::fail(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

nlohmann::json parse_or_empty(const char* text) {
  if (!text || !*text) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    despeck::fail(ErrorCode::Format, std::string("malformed JSON argument: ") + e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const nlohmann::json& j) {
  if (out) *out = dup_string(j.dump());
}

}  // namespace

extern "C" {

const char* dsn_version(void) { return "0.1.0"; }

const char* dsn_status_string(dsn_status status) {
  switch (status) {
    case DSN_OK: return "ok";
    case DSN_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case DSN_ERR_IO: return "io";
    case DSN_ERR_FORMAT: return "format";
    case DSN_ERR_NUMERIC: return "numeric";
    case DSN_ERR_STATE: return "state";
    case DSN_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* dsn_last_error(void) { return g_last_error.c_str(); }

void dsn_string_free(char* str) { std::free(str); }

dsn_status dsn_image_create(size_t width, size_t height, const float* data, dsn_image** out) {
  return guarded([&] {
    need(out, "out");
    despeck::require(width > 0 && height > 0, "image dimensions must be positive");
    if (height > std::numeric_limits<size_t>::max() / width) despeck::fail(ErrorCode::InvalidArgument, "image too large");
    std::vector<float> v(width * height, 0.0f);
    if (data) std::copy(data, data + v.size(), v.begin());
    *out = new dsn_image{despeck::raster::Image(width, height, std::move(v))};
  });
}

dsn_status dsn_image_load(const char* path, dsn_image** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dsn_image{despeck::raster::load_raster(path)};
  });
}

dsn_status dsn_image_save(const dsn_image* image, const char* path) {
  return guarded([&] {
    need(image, "image");
    need(path, "path");
    despeck::raster::save_raster(image->img, path);
  });
}

void dsn_image_free(dsn_image* image) { delete image; }

dsn_status dsn_image_size(const dsn_image* image, size_t* width, size_t* height) {
  return guarded([&] {
    need(image, "image");
    if (width) *width = image->img.width();
    if (height) *height = image->img.height();
  });
}

dsn_status dsn_image_copy_data(const dsn_image* image, float* dst, size_t count) {
  return guarded([&] {
    need(image, "image");
    need(dst, "dst");
    const auto& img = image->img;
    despeck::require(count >= img.size(), "destination buffer too small");
    for (size_t i = 0; i < img.size(); ++i) {
      dst[i] = img.masked(i) ? std::numeric_limits<float>::quiet_NaN() : img[i];
    }
  });
}

dsn_status dsn_image_export_png(const dsn_image* image, const char* path) {
  return guarded([&] {
    need(image, "image");
    need(path, "path");
    despeck::raster::export_png(image->img, path);
  });
}

dsn_status dsn_fit_gamma_looks(const dsn_image* noise, double* looks, double* mean) {
  return guarded([&] {
    need(noise, "noise");
    const auto fit = despeck::speckle::fit_gamma_looks(noise->img);
    if (looks) *looks = fit.looks_hat;
    if (mean) *mean = fit.mean_hat;
  });
}

dsn_status dsn_synthesize_label(const char* stack_dir, double threshold, dsn_image** out_label,
                                dsn_image** out_std) {
  return guarded([&] {
    need(stack_dir, "stack_dir");
    need(out_label, "out_label");
    despeck::require(threshold > 0.0 && std::isfinite(threshold), "threshold must be positive");
    const auto stack = despeck::labelgen::load_stack(stack_dir);
    auto label = std::make_unique<dsn_image>(dsn_image{despeck::labelgen::synthesize_label(stack, threshold)});
    if (out_std) *out_std = new dsn_image{despeck::labelgen::temporal_std(stack)};
    *out_label = label.release();
  });
}

dsn_status dsn_extract_patches(const char* pairs_dir, const char* train_config_json, char** summary_json) {
  return guarded([&] {
    need(pairs_dir, "pairs_dir");
    auto cfg = despeck::train::TrainConfig::phase1();
    despeck::train::from_json(parse_or_empty(train_config_json), cfg);
    const auto pairs = despeck::experiment::load_training_pairs(pairs_dir);
    const auto set = despeck::train::build_training_set(pairs, cfg);
    emit(summary_json, {{"pairs", pairs.size()},
                        {"patch_size", set.patch_size},
                        {"stride", set.stride},
                        {"windows_total", set.windows_total},
                        {"windows_dropped", set.windows_dropped},
                        {"patches", set.patches.size()}});
  });
}

dsn_status dsn_model_create(const char* config_json, uint64_t seed, dsn_model** out) {
  return guarded([&] {
    need(out, "out");
    auto cfg = despeck::net::ModelConfig::desk();
    despeck::net::from_json(parse_or_empty(config_json), cfg);
    cfg.validate();
    *out = new dsn_model{despeck::net::build_model<float>(cfg, seed)};
  });
}

dsn_status dsn_model_load(const char* path, dsn_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new dsn_model{despeck::net::load_checkpoint(path)};
  });
}

dsn_status dsn_model_save(const dsn_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    despeck::net::save_checkpoint(model->model, path);
  });
}

void dsn_model_free(dsn_model* model) { delete model; }

dsn_status dsn_model_info(const dsn_model* model, char** info_json) {
  return guarded([&] {
    need(model, "model");
    need(info_json, "info_json");
    emit(info_json, {{"config", model->model.config}, {"history", model->model.history}});
  });
}

dsn_status dsn_train(dsn_model* model, const char* pairs_dir, const char* train_config_json, char** history_json) {
  return guarded([&] {
    need(model, "model");
    need(pairs_dir, "pairs_dir");
    auto cfg = despeck::train::TrainConfig::phase1();
    despeck::train::from_json(parse_or_empty(train_config_json), cfg);
    const auto pairs = despeck::experiment::load_training_pairs(pairs_dir);
    const auto set = despeck::train::build_training_set(pairs, cfg);
    const auto hist = despeck::train::train_phase1(model->model, set, cfg);
    emit(history_json, hist);
  });
}

dsn_status dsn_finetune(dsn_model* model, const dsn_image* target, const char* preset, const char* config_json,
                        char** history_json) {
  return guarded([&] {
    need(model, "model");
    need(target, "target");
    const auto p = preset ? despeck::train::preset_from_string(preset) : despeck::train::Preset::Slc;
    auto cfg = despeck::train::TrainConfig::finetune(p);
    despeck::train::from_json(parse_or_empty(config_json), cfg);
    const auto hist = despeck::train::finetune_phase2(model->model, target->img, cfg);
    emit(history_json, hist);
  });
}

dsn_status dsn_despeckle(dsn_model* model, const dsn_image* noisy, size_t tile, size_t overlap,
                         dsn_image** out_clean, dsn_image** out_noise, char** info_json) {
  return guarded([&] {
    need(model, "model");
    need(noisy, "noisy");
    need(out_clean, "out_clean");
    if (tile == 0) {
      tile = despeck::train::kDefaultTile;
      overlap = despeck::train::kDefaultOverlap;
    }
    auto res = despeck::train::despeckle(model->model, noisy->img, tile, overlap);
    emit(info_json, {{"normalization_scale", res.normalization.scale}, {"clamped", res.clamped}});
    auto clean = std::make_unique<dsn_image>(dsn_image{std::move(res.clean)});
    if (out_noise) *out_noise = new dsn_image{std::move(res.noise)};
    *out_clean = clean.release();
  });
}

dsn_status dsn_evaluate(const dsn_image* estimate, const dsn_image* reference, const dsn_image* noisy,
                        const char* options_json, char** report_json) {
  return guarded([&] {
    need(estimate, "estimate");
    need(noisy, "noisy");
    need(report_json, "report_json");
    namespace m = despeck::metrics;
    const auto opts = parse_or_empty(options_json);
    m::Roi roi = m::Roi::whole(estimate->img);
    if (opts.contains("roi") && !opts.at("roi").is_null()) roi = opts.at("roi").get<m::Roi>();
    std::optional<m::Site> site;
    if (opts.contains("site") && !opts.at("site").is_null()) {
      site = m::Site{opts.at("site").at("row").get<std::size_t>(), opts.at("site").at("col").get<std::size_t>()};
    }
    auto convention = m::GainConvention::AsPrinted;
    if (opts.contains("convention")) {
      const auto c = opts.at("convention").get<std::string>();
      if (c == "conventional") {
        convention = m::GainConvention::Conventional;
      } else if (c != "as-printed") {
        despeck::fail(ErrorCode::InvalidArgument, "unknown gain convention '" + c + "'");
      }
    }
    const auto report =
        m::full_report(estimate->img, reference ? &reference->img : nullptr, noisy->img, roi, site, convention);
    emit(report_json, m::to_json(report));
  });
}

dsn_status dsn_simulate(const char* spec_json, const char* out_dir, char** manifest_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    namespace ex = despeck::experiment;
    const auto spec = ex::spec_from_json(parse_or_empty(spec_json));
    ex::write_simulation(ex::simulate_data(spec), out_dir);
    auto manifest = despeck::read_json_file((std::filesystem::path(out_dir) / "simulation.json").string());
    manifest["spec"] = ex::spec_to_json(spec);
    emit(manifest_json, manifest);
  });
}

dsn_status dsn_run_experiment(const char* spec_json, const char* out_dir, char** report_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    namespace ex = despeck::experiment;
    const auto report = ex::run_experiment(ex::spec_from_json(parse_or_empty(spec_json)), out_dir);
    emit(report_json, report);
  });
}

dsn_status dsn_ablate(const char* spec_json, const char* mode, const char* out_dir, char** table_json) {
  return guarded([&] {
    need(mode, "mode");
    need(out_dir, "out_dir");
    namespace ex = despeck::experiment;
    const auto m = ex::ablation_mode_from_string(mode);
    const auto table = ex::ablate(ex::spec_from_json(parse_or_empty(spec_json)), m, out_dir);
    emit(table_json, table.to_json());
  });
}

}  // extern "C"
