#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace despeck::raster {

// Single-band intensity raster in linear power units, row-major.
//
// Masked pixels carry no value; their data slot is held at 0 so that two
// images with the same valid content compare equal.
class Image {
 public:
  Image() = default;
  Image(std::size_t width, std::size_t height, float fill = 0.0f);
  // Non-finite and negative entries of `data` become masked.
  Image(std::size_t width, std::size_t height, std::vector<float> data);
  Image(std::size_t width, std::size_t height, std::vector<float> data,
        std::vector<std::uint8_t> mask);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float operator()(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }
  float operator[](std::size_t i) const { return data_[i]; }
  bool masked(std::size_t i) const { return mask_[i] != 0; }
  bool masked(std::size_t x, std::size_t y) const { return mask_[y * width_ + x] != 0; }

  // Assigning a non-finite or negative value masks the pixel.
  void set(std::size_t i, float value);
  void set(std::size_t x, std::size_t y, float value) { set(y * width_ + x, value); }
  void set_masked(std::size_t i);

  std::span<const float> data() const noexcept { return data_; }
  std::span<const std::uint8_t> mask() const noexcept { return mask_; }

  std::size_t valid_count() const;
  // Mean of unmasked pixels; throws if none.
  double valid_mean() const;

  Image crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const;
  Image scaled(double factor) const;

  // Free-form header metadata carried through the sidecar file.
  nlohmann::json metadata = nlohmann::json::object();

  friend bool operator==(const Image& a, const Image& b);

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<float> data_;
  std::vector<std::uint8_t> mask_;
};

bool same_shape(const Image& a, const Image& b);

struct PatchPair {
  Image noisy;
  Image label;
};

struct PatchSet {
  std::size_t patch_size = 0;
  std::size_t stride = 0;
  std::vector<PatchPair> patches;
  std::size_t windows_total = 0;
  std::size_t windows_dropped = 0;
};

// Sidecar path for a raster: same stem, ".json" extension.
std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

Image load_raster(const std::filesystem::path& path);
void save_raster(const Image& img, const std::filesystem::path& path);

// 8-bit grayscale PNG of 10*log10(intensity), clipped to the [lo, hi]
// percentile range of unmasked pixels. Constant images render 128 and
// masked pixels render 0.
void export_png(const Image& img, const std::filesystem::path& path, double lo_percentile = 0.02,
                double hi_percentile = 0.98);
// Linear mapping of [lo_value, hi_value] onto [0, 255] (ratio images).
void export_png_linear(const Image& img, const std::filesystem::path& path, double lo_value,
                       double hi_value);
// Gray levels export_png would write, row-major.
std::vector<std::uint8_t> render_db_gray(const Image& img, double lo_percentile,
                                         double hi_percentile);

void write_png_gray8(const std::filesystem::path& path, std::size_t width, std::size_t height,
                     std::span<const std::uint8_t> pixels);

// Sliding-window patch extraction. A window is dropped when either the
// label or the noisy input has a masked pixel inside it.
PatchSet extract_patches(const Image& noisy, const Image& label, std::size_t patch_size,
                         std::size_t stride);

}  // namespace despeck::raster
