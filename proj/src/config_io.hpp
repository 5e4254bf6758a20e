#pragma once

#include <nlohmann/json.hpp>

#include "metrics.hpp"
#include "network.hpp"
#include "training.hpp"

// nlohmann::json adapters. Readers accept partial objects: absent keys keep
// the defaults of the target struct.

namespace despeck::net {
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const PhaseRecord& r);
void from_json(const nlohmann::json& j, PhaseRecord& r);
}  // namespace despeck::net

namespace despeck::train {
void to_json(nlohmann::json& j, const LrStep& s);
void from_json(const nlohmann::json& j, LrStep& s);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const TrainHistory& h);
Preset preset_from_string(const std::string& name);
}  // namespace despeck::train

namespace despeck::metrics {
void to_json(nlohmann::json& j, const Roi& r);
void from_json(const nlohmann::json& j, Roi& r);
// "x,y,w,h" and "r,c" command-line forms.
Roi parse_roi(const std::string& text);
Site parse_site(const std::string& text);
}  // namespace despeck::metrics

namespace despeck {
nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);
}  // namespace despeck
