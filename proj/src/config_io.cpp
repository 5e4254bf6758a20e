#include "config_io.hpp"

#include <fstream>
#include <sstream>

#include "error.hpp"

namespace despeck::net {

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"depth", c.depth}, {"channels", c.channels}, {"input_channels", c.input_channels}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.depth = j.value("depth", c.depth);
  c.channels = j.value("channels", c.channels);
  c.input_channels = j.value("input_channels", c.input_channels);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"mu", w.mu}, {"xi", w.xi}, {"lambda", w.lambda}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.mu = j.value("mu", w.mu);
  w.xi = j.value("xi", w.xi);
  w.lambda = j.value("lambda", w.lambda);
}

void to_json(nlohmann::json& j, const PhaseRecord& r) {
  j = {{"phase", r.phase}, {"weights", r.weights}, {"epochs", r.epochs}, {"iterations", r.iterations}};
}

void from_json(const nlohmann::json& j, PhaseRecord& r) {
  r.phase = j.at("phase").get<int>();
  r.weights = j.at("weights").get<LossWeights>();
  r.epochs = j.at("epochs").get<std::size_t>();
  r.iterations = j.at("iterations").get<std::size_t>();
}

}  // namespace despeck::net

namespace despeck::train {

void to_json(nlohmann::json& j, const LrStep& s) {
  j = {{"first_epoch", s.first_epoch}, {"last_epoch", s.last_epoch}, {"lr", s.lr}};
}

void from_json(const nlohmann::json& j, LrStep& s) {
  s.first_epoch = j.at("first_epoch").get<std::size_t>();
  s.last_epoch = j.at("last_epoch").get<std::size_t>();
  s.lr = j.at("lr").get<double>();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr_schedule", c.lr_schedule},
       {"weights", c.weights},
       {"seed", c.seed},
       {"normalize", c.normalize},
       {"patch_size", c.patch_size},
       {"stride", c.stride},
       {"max_patches", c.max_patches},
       {"freeze_bn_stats", c.freeze_bn_stats},
       {"freeze_clean_branch", c.freeze_clean_branch}};
  if (c.early_stop) {
    j["early_stop"] = {{"patience", c.early_stop->patience}, {"min_delta", c.early_stop->min_delta}};
  } else {
    j["early_stop"] = nullptr;
  }
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("lr_schedule")) c.lr_schedule = j.at("lr_schedule").get<std::vector<LrStep>>();
  if (j.contains("weights")) {
    net::from_json(j.at("weights"), c.weights);
  }
  c.seed = j.value("seed", c.seed);
  c.normalize = j.value("normalize", c.normalize);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.stride = j.value("stride", c.stride);
  c.max_patches = j.value("max_patches", c.max_patches);
  c.freeze_bn_stats = j.value("freeze_bn_stats", c.freeze_bn_stats);
  c.freeze_clean_branch = j.value("freeze_clean_branch", c.freeze_clean_branch);
  if (j.contains("early_stop")) {
    const auto& e = j.at("early_stop");
    if (e.is_null()) {
      c.early_stop.reset();
    } else {
      EarlyStop es;
      es.patience = e.value("patience", es.patience);
      es.min_delta = e.value("min_delta", es.min_delta);
      c.early_stop = es;
    }
  }
}

void to_json(nlohmann::json& j, const TrainHistory& h) {
  j = {{"epoch_mean_loss", h.epoch_mean_loss}, {"epoch_lr", h.epoch_lr},   {"iterations", h.iterations},
       {"skipped_steps", h.skipped_steps},     {"early_stopped", h.early_stopped}};
}

Preset preset_from_string(const std::string& name) {
  if (name == "grd") return Preset::Grd;
  if (name == "slc") return Preset::Slc;
  fail(ErrorCode::InvalidArgument, "unknown preset '" + name + "' (expected grd or slc)");
}

}  // namespace despeck::train

namespace despeck::metrics {

void to_json(nlohmann::json& j, const Roi& r) {
  j = {{"x", r.x}, {"y", r.y}, {"width", r.width}, {"height", r.height}};
}

void from_json(const nlohmann::json& j, Roi& r) {
  r.x = j.at("x").get<std::size_t>();
  r.y = j.at("y").get<std::size_t>();
  r.width = j.at("width").get<std::size_t>();
  r.height = j.at("height").get<std::size_t>();
}

namespace {

std::vector<std::size_t> parse_list(const std::string& text, std::size_t expected, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, std::string("malformed ") + what + ": '" + text + "'");
    }
  }
  if (out.size() != expected) fail(ErrorCode::InvalidArgument, std::string("malformed ") + what + ": '" + text + "'");
  return out;
}

}  // namespace

Roi parse_roi(const std::string& text) {
  const auto v = parse_list(text, 4, "ROI (expected x,y,w,h)");
  return {v[0], v[1], v[2], v[3]};
}

Site parse_site(const std::string& text) {
  const auto v = parse_list(text, 2, "site (expected r,c)");
  return {v[0], v[1]};
}

}  // namespace despeck::metrics

namespace despeck {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open JSON file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, "malformed JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write JSON file: " + path);
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::Io, "write failed: " + path);
}

}  // namespace despeck
