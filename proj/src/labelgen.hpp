#pragma once

#include <filesystem>
#include <vector>

#include "metrics.hpp"
#include "raster.hpp"

namespace despeck::labelgen {

using raster::Image;

// Co-registered multi-temporal stack with per-pixel temporal statistics.
class TemporalStack {
 public:
  explicit TemporalStack(std::vector<Image> images);

  std::size_t depth() const noexcept { return images_.size(); }
  std::size_t width() const noexcept { return images_.front().width(); }
  std::size_t height() const noexcept { return images_.front().height(); }
  const std::vector<Image>& images() const noexcept { return images_; }

  // Per-pixel mean over valid timestamps; masked where none are valid.
  const Image& temporal_mean() const noexcept { return mean_; }
  // Per-pixel sample std (N-1 denominator); masked below 2 valid timestamps.
  const Image& temporal_std() const noexcept { return std_; }

 private:
  std::vector<Image> images_;
  Image mean_;
  Image std_;
};

// Rasters of a directory, sorted by filename (each *.rawf32 with sidecar).
TemporalStack load_stack(const std::filesystem::path& dir);

Image temporal_std(const TemporalStack& stack);

inline constexpr double kDefaultThreshold = 0.1;

// Temporal mean where Z <= threshold, masked elsewhere.
Image synthesize_label(const TemporalStack& stack, double threshold = kDefaultThreshold);

// ENL of a synthesized label over an ROI, a residual-speckle diagnostic.
double residual_enl(const Image& label, const metrics::Roi& roi);

}  // namespace despeck::labelgen
