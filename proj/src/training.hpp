#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "network.hpp"
#include "raster.hpp"

namespace despeck::train {

using raster::Image;

// Learning rate for epochs [first_epoch, last_epoch] (1-based, inclusive).
struct LrStep {
  std::size_t first_epoch = 1;
  std::size_t last_epoch = 1;
  double lr = 1e-3;
};

// 1e-3 for epochs 1-10, 10^-3.5 for 11-20, 1e-4 for 21-30.
std::vector<LrStep> default_lr_schedule();

// Epochs past the last step keep the last rate.
double lr_at(std::span<const LrStep> schedule, std::size_t epoch);

struct EarlyStop {
  std::size_t patience = 50;  // iterations without improvement
  double min_delta = 1e-5;
};

enum class Preset { Grd, Slc };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  std::vector<LrStep> lr_schedule = default_lr_schedule();
  net::LossWeights weights{1.0, 0.01, 0.0};
  std::uint64_t seed = 0;
  bool normalize = true;
  std::optional<EarlyStop> early_stop;
  std::size_t patch_size = 40;
  std::size_t stride = 40;
  std::size_t max_patches = 0;  // 0 keeps every extracted patch
  bool freeze_bn_stats = false;
  bool freeze_clean_branch = false;

  void validate() const;

  static TrainConfig phase1();
  // Fine-tuning presets: GRD (mu2=1e-2, xi=1, lambda=0) and single-look
  // SLC (mu2=1e-2, xi=1, lambda=1e-4); one epoch, stride patch_size/2,
  // batches of 8.
  static TrainConfig finetune(Preset preset);
};

struct NormalizationRecord {
  double scale = 1.0;  // unmasked mean of the image
};

NormalizationRecord normalization_for(const Image& img);

struct TrainingPair {
  Image noisy;
  Image label;
};

// Normalizes each pair by the noisy image's mean (when cfg.normalize),
// extracts patches and keeps a seeded subset of at most cfg.max_patches.
raster::PatchSet build_training_set(std::span<const TrainingPair> pairs, const TrainConfig& cfg);

struct TrainHistory {
  std::vector<double> epoch_mean_loss;
  std::vector<double> epoch_lr;
  std::vector<double> iteration_loss;
  std::size_t iterations = 0;
  std::size_t skipped_steps = 0;  // Adam steps dropped for non-finite gradients
  bool early_stopped = false;
};

TrainHistory train_phase1(net::Model<float>& model, const raster::PatchSet& patches, const TrainConfig& cfg);

// Unsupervised fine-tuning on patches of the target image itself.
TrainHistory finetune_phase2(net::Model<float>& model, const Image& image, const TrainConfig& cfg);

struct DespeckleResult {
  Image clean;  // X hat, physical units
  Image noise;  // N hat, unit-mean scale
  NormalizationRecord normalization;
  std::size_t clamped = 0;  // negative clean estimates clamped to 0
};

inline constexpr std::size_t kDefaultTile = 512;
inline constexpr std::size_t kDefaultOverlap = 32;

// Eval-mode inference in overlapping tiles; each tile contributes only its
// inner region. A single pass is used when the image fits in one tile.
DespeckleResult despeckle(net::Model<float>& model, const Image& image, std::size_t tile = kDefaultTile,
                          std::size_t overlap = kDefaultOverlap);

}  // namespace despeck::train
