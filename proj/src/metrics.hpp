#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "raster.hpp"

namespace despeck::metrics {

using raster::Image;

struct Roi {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;

  static Roi whole(const Image& img) { return {0, 0, img.width(), img.height()}; }
};

struct Site {
  std::size_t row = 0;
  std::size_t col = 0;
};

// Both images quantized with one linear map anchored on the reference range.
struct EightBitPair {
  std::vector<std::uint8_t> reference;
  std::vector<std::uint8_t> other;
  std::vector<std::uint8_t> valid;  // 1 where neither input is masked
  double offset = 0.0;              // reference min
  double scale = 0.0;               // 255 / (max - min)
};

EightBitPair to_8bit_pair(const Image& reference, const Image& other);

// 20 log10(255 / sqrt(MSE)) on the shared 8-bit conversion; +inf when MSE = 0.
double psnr(const Image& x_hat, const Image& x_ref);
double psnr_from_mse(double mse);

inline constexpr std::size_t kSsimWindow = 8;
// Mean local SSIM over 8x8 uniform windows of two 8-bit images.
double ssim_u8(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
               std::span<const std::uint8_t> valid, std::size_t width, std::size_t height);
double ssim(const Image& x_hat, const Image& x_ref);

enum class GainConvention {
  AsPrinted,     // 10 log10(MSE(x_hat, y) / MSE(x_hat, x_ref))
  Conventional,  // 10 log10(MSE(y, x_ref) / MSE(x_hat, x_ref))
};
double despeckling_gain(const Image& x_hat, const Image& x_ref, const Image& y,
                        GainConvention convention = GainConvention::AsPrinted);

struct EdgePreservation {
  double gp = 0.0;
  double epi = 0.0;
};
double epi_from_gp(double gp);
EdgePreservation epi(const Image& x_hat, const Image& x_ref);

// Population mean and variance of the unmasked pixels of an ROI.
struct RoiMoments {
  double mean = 0.0;
  double variance = 0.0;
  std::size_t count = 0;
};
RoiMoments roi_moments(const Image& img, const Roi& roi);

double enl(const Image& img, const Roi& roi);
double cx(const Image& img, const Roi& roi);

double cnn_index(const Image& img, const Site& site);

struct RatioStats {
  Image ratio;
  double mor = 0.0;
  double vor = 0.0;
  std::size_t excluded = 0;  // pixels dropped for a non-positive denominator
};
RatioStats ratio_stats(const Image& y, const Image& x_hat);

struct MetricReport {
  std::optional<double> psnr;
  std::optional<double> ssim;
  std::optional<double> dg;
  std::optional<double> gp;
  std::optional<double> epi;
  std::optional<double> enl;
  std::optional<double> cx;
  std::optional<double> cnn_db;
  std::optional<double> mor;
  std::optional<double> vor;
};

// Reference-free mode (x_ref absent) leaves psnr/ssim/dg/gp/epi empty.
MetricReport full_report(const Image& x_hat, const Image* x_ref, const Image& y, const Roi& roi,
                         std::optional<Site> scatter_site = std::nullopt,
                         GainConvention convention = GainConvention::AsPrinted);

// Infinite values are written as the strings "+inf" / "-inf"; absent as null.
nlohmann::json to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);
nlohmann::json number_to_json(double v);
std::optional<double> number_from_json(const nlohmann::json& j);

}  // namespace despeck::metrics
