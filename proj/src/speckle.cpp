#include "speckle.hpp"

#include <cmath>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace despeck::speckle {

namespace {

void check_density_args(double n, double looks) {
  require(n >= 0.0, "speckle density is undefined for negative values");
  require(looks >= 1.0, "number of looks must be >= 1");
}

}  // namespace

double gamma_pdf(double n, double looks) {
  check_density_args(n, looks);
  if (n == 0.0) return looks == 1.0 ? 1.0 : 0.0;
  const double log_p = looks * std::log(looks) + (looks - 1.0) * std::log(n) - n * looks -
                       std::lgamma(looks);
  return std::exp(log_p);
}

double nakagami_pdf(double n, double looks) {
  check_density_args(n, looks);
  if (n == 0.0) return 0.0;
  const double log_p = std::log(2.0) + looks * std::log(looks) + (2.0 * looks - 1.0) * std::log(n) -
                       looks * n * n - std::lgamma(looks);
  return std::exp(log_p);
}

raster::Image sample_speckle(std::size_t width, std::size_t height, const SpeckleParams& params,
                             std::uint64_t seed) {
  require(width > 0 && height > 0, "speckle field must have nonzero size");
  require(params.looks >= 1.0, "number of looks must be >= 1");
  Rng rng(seed);
  const double scale = 1.0 / params.looks;
  std::vector<float> data(width * height);
  for (auto& v : data) {
    const double g = rng.gamma(params.looks, scale);
    v = static_cast<float>(params.domain == Domain::Intensity ? g : std::sqrt(g));
  }
  return raster::Image(width, height, std::move(data));
}

raster::Image apply_multiplicative(const raster::Image& clean, const raster::Image& noise) {
  require(raster::same_shape(clean, noise), "clean and noise images differ in size");
  raster::Image out(clean.width(), clean.height());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean.masked(i) || noise.masked(i)) {
      out.set_masked(i);
    } else {
      out.set(i, clean[i] * noise[i]);
    }
  }
  out.metadata = clean.metadata;
  return out;
}

GammaFit fit_gamma_looks(const raster::Image& noise) {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  // Welford accumulation.
  for (std::size_t i = 0; i < noise.size(); ++i) {
    if (noise.masked(i)) continue;
    ++n;
    const double d = noise[i] - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (noise[i] - mean);
  }
  require(n >= 100, "gamma fit needs at least 100 unmasked pixels");
  const double var = m2 / static_cast<double>(n);
  if (!(var > 0.0)) fail(ErrorCode::Numeric, "gamma fit on a constant field (zero variance)");
  GammaFit fit;
  fit.mean_hat = mean;
  fit.looks_hat = mean * mean / var;
  return fit;
}

}  // namespace despeck::speckle
