#include "labelgen.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace despeck::labelgen {

namespace fs = std::filesystem;

TemporalStack::TemporalStack(std::vector<Image> images) : images_(std::move(images)) {
  require(images_.size() >= 2, "temporal stack needs at least 2 images");
  for (const auto& img : images_) {
    require(raster::same_shape(img, images_.front()), "stack images differ in size");
  }
  const std::size_t w = width(), h = height(), n = w * h;
  mean_ = Image(w, h);
  std_ = Image(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    double sum = 0.0;
    for (const auto& img : images_) {
      if (img.masked(i)) continue;
      ++count;
      sum += img[i];
    }
    const double mean = count ? sum / static_cast<double>(count) : 0.0;
    double m2 = 0.0;
    for (const auto& img : images_) {
      if (img.masked(i)) continue;
      const double d = img[i] - mean;
      m2 += d * d;
    }
    if (count == 0) {
      mean_.set_masked(i);
    } else {
      mean_.set(i, static_cast<float>(mean));
    }
    if (count < 2) {
      std_.set_masked(i);
    } else {
      std_.set(i, static_cast<float>(std::sqrt(m2 / static_cast<double>(count - 1))));
    }
  }
}

TemporalStack load_stack(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::Io, "stack directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".rawf32") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  std::vector<Image> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(raster::load_raster(f));
  return TemporalStack(std::move(images));
}

Image temporal_std(const TemporalStack& stack) { return stack.temporal_std(); }

Image synthesize_label(const TemporalStack& stack, double threshold) {
  require(threshold > 0.0, "label threshold must be positive");
  const Image& z = stack.temporal_std();
  Image label = stack.temporal_mean();
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (z.masked(i) || z[i] > threshold) label.set_masked(i);
  }
  return label;
}

double residual_enl(const Image& label, const metrics::Roi& roi) { return metrics::enl(label, roi); }

}  // namespace despeck::labelgen
