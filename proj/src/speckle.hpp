#pragma once

#include <cstddef>
#include <cstdint>

#include "raster.hpp"

namespace despeck::speckle {

enum class Domain { Intensity, Amplitude };

struct SpeckleParams {
  double looks = 1.0;  // L >= 1
  Domain domain = Domain::Intensity;
};

struct GammaFit {
  double looks_hat = 0.0;
  double mean_hat = 0.0;
  const char* method = "moments";
};

// Unit-mean Gamma density of L-look intensity speckle.
double gamma_pdf(double n, double looks);
// Nakagami density of L-look amplitude speckle, exp(-L n^2) form.
double nakagami_pdf(double n, double looks);

// i.i.d. speckle field. Intensity: Gamma(L, 1/L). Amplitude: square root of
// the intensity draw, which is Nakagami with unit mean square.
raster::Image sample_speckle(std::size_t width, std::size_t height, const SpeckleParams& params,
                             std::uint64_t seed);

// Y = X * N per pixel; mask is the union of both masks.
raster::Image apply_multiplicative(const raster::Image& clean, const raster::Image& noise);

// Method-of-moments fit of the unit-mean Gamma model: L = mean^2 / var.
GammaFit fit_gamma_looks(const raster::Image& noise);

}  // namespace despeck::speckle
