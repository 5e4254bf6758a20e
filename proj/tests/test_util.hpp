#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <string>

#include <unistd.h>

// Fresh scratch directory under the test working directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  auto dir = std::filesystem::current_path() / "scratch" /
             (name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

#include <cstdint>
#include <vector>

#include "random.hpp"
#include "raster.hpp"

// Positive random intensities, log-uniform over [lo, hi].
inline despeck::raster::Image random_image(std::size_t w, std::size_t h, std::uint64_t seed,
                                           double lo = 1e-3, double hi = 1.0) {
  despeck::Rng rng(seed);
  std::vector<float> d(w * h);
  const double a = std::log(lo), b = std::log(hi);
  for (auto& v : d) v = static_cast<float>(std::exp(a + (b - a) * rng.uniform()));
  return despeck::raster::Image(w, h, std::move(d));
}
