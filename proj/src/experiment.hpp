#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metrics.hpp"
#include "network.hpp"
#include "raster.hpp"
#include "training.hpp"

namespace despeck::experiment {

using raster::Image;

enum class SceneKind { Mosaic, Gradient, Checkerboard };

struct SceneSpec {
  SceneKind kind = SceneKind::Mosaic;
  std::size_t width = 256;
  std::size_t height = 256;
  std::size_t cell = 64;     // mosaic / checkerboard cell size
  double min_level = 0.01;   // linear intensity (-20 dB)
  double max_level = 0.12;
};

struct Scene {
  Image clean;
  metrics::Roi roi;  // homogeneous region used for ENL / Cx
};

// Mosaic: cells with log-uniform random levels. Gradient: horizontal
// log-linear ramp. Checkerboard: two levels, min and max.
Scene make_scene(const SceneSpec& spec, std::uint64_t seed);

struct ExperimentSpec {
  SceneSpec scene;
  double looks = 5.0;
  std::size_t stack_depth = 16;
  std::uint64_t seed = 1;
  double nu = 0.1;
  net::ModelConfig model = net::ModelConfig::desk();
  train::TrainConfig train = desk_phase1();
  std::optional<double> target_looks = 1.0;
  train::TrainConfig finetune = train::TrainConfig::finetune(train::Preset::Slc);
  std::size_t tile = train::kDefaultTile;
  std::size_t overlap = train::kDefaultOverlap;
  // Reuse a trained phase-1 model instead of training one.
  std::optional<std::string> phase1_checkpoint;
  std::vector<net::LossWeights> sweep_phase1 = {{.mu = 1.0, .xi = 1e-2, .lambda = 0.0}};
  std::vector<net::LossWeights> sweep_phase2 = reference_phase2_sweep();

  void validate() const;

  static train::TrainConfig desk_phase1();
  // Fine-tuning rows of the loss-weight study plus the single-look preset.
  static std::vector<net::LossWeights> reference_phase2_sweep();
};

ExperimentSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const ExperimentSpec& spec);

// Deterministic sub-seed for a named pipeline component.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

struct SimulatedData {
  Image clean;
  metrics::Roi roi;
  std::vector<Image> stack;
  Image test_noisy;
  std::optional<Image> target_clean;
  std::optional<Image> target_noisy;
  metrics::Roi target_roi;
};

SimulatedData simulate_data(const ExperimentSpec& spec);
// Writes clean.rawf32, stack/tNN.rawf32, test_noisy.rawf32 and, with a
// target, target_clean.rawf32 / target_noisy.rawf32, plus simulation.json.
void write_simulation(const SimulatedData& data, const std::filesystem::path& dir);
SimulatedData read_simulation(const std::filesystem::path& dir);

// Training pairs of a pairs directory: every <stem>_noisy.rawf32 paired with
// <stem>_label.rawf32, or with label.rawf32 when no per-pair label exists.
std::vector<train::TrainingPair> load_training_pairs(const std::filesystem::path& dir);

// Metrics of a despeckled estimate plus the Gamma fit of its noise image.
nlohmann::json evaluate_estimate(const train::DespeckleResult& result, const Image& noisy, const Image* clean,
                                 const metrics::Roi& roi);

nlohmann::json run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir);

enum class AblationMode { Phase1Only, Phase2Only, Phases, WeightSweep };
AblationMode ablation_mode_from_string(const std::string& name);

struct AblationRow {
  std::string label;
  int phase = 1;
  net::LossWeights weights;
  metrics::MetricReport report;
  std::optional<double> noise_looks;
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

AblationTable ablate(const ExperimentSpec& spec, AblationMode mode, const std::filesystem::path& out_dir);

}  // namespace despeck::experiment
