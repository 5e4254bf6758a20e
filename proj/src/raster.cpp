#include "raster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <png.h>

#include "error.hpp"

namespace despeck::raster {

namespace fs = std::filesystem;

namespace {

bool valid_value(float v) { return std::isfinite(v) && v >= 0.0f; }

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  } else {
    return v;
  }
}

}  // namespace

Image::Image(std::size_t width, std::size_t height, float fill)
    : width_(width), height_(height), data_(width * height, fill), mask_(width * height, 0) {
  if (!valid_value(fill)) {
    std::fill(data_.begin(), data_.end(), 0.0f);
    std::fill(mask_.begin(), mask_.end(), 1);
  }
}

Image::Image(std::size_t width, std::size_t height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)), mask_(width * height, 0) {
  require(data_.size() == width * height, "image data length does not match width*height");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!valid_value(data_[i])) set_masked(i);
  }
}

Image::Image(std::size_t width, std::size_t height, std::vector<float> data,
             std::vector<std::uint8_t> mask)
    : width_(width), height_(height), data_(std::move(data)), mask_(std::move(mask)) {
  require(data_.size() == width * height, "image data length does not match width*height");
  require(mask_.size() == width * height, "image mask length does not match width*height");
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (mask_[i] || !valid_value(data_[i])) set_masked(i);
  }
}

void Image::set(std::size_t i, float value) {
  if (valid_value(value)) {
    data_[i] = value;
    mask_[i] = 0;
  } else {
    set_masked(i);
  }
}

void Image::set_masked(std::size_t i) {
  data_[i] = 0.0f;
  mask_[i] = 1;
}

std::size_t Image::valid_count() const {
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), std::uint8_t{0}));
}

double Image::valid_mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!mask_[i]) {
      sum += data_[i];
      ++n;
    }
  }
  if (n == 0) fail(ErrorCode::InvalidArgument, "image has no unmasked pixels");
  return sum / static_cast<double>(n);
}

Image Image::crop(std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) const {
  require(x0 + w <= width_ && y0 + h <= height_, "crop window outside image");
  std::vector<float> d(w * h);
  std::vector<std::uint8_t> m(w * h);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t src = (y0 + y) * width_ + x0;
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(src), w,
                d.begin() + static_cast<std::ptrdiff_t>(y * w));
    std::copy_n(mask_.begin() + static_cast<std::ptrdiff_t>(src), w,
                m.begin() + static_cast<std::ptrdiff_t>(y * w));
  }
  return Image(w, h, std::move(d), std::move(m));
}

Image Image::scaled(double factor) const {
  Image out = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!mask_[i]) out.set(i, static_cast<float>(data_[i] * factor));
  }
  return out;
}

bool operator==(const Image& a, const Image& b) {
  if (a.width_ != b.width_ || a.height_ != b.height_) return false;
  if (a.mask_ != b.mask_) return false;
  return std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

bool same_shape(const Image& a, const Image& b) {
  return a.width() == b.width() && a.height() == b.height();
}

fs::path sidecar_path(const fs::path& raw_path) {
  fs::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

Image load_raster(const fs::path& path) {
  const fs::path header_path = sidecar_path(path);
  if (!fs::exists(path)) fail(ErrorCode::Io, "raster file not found: " + path.string());
  if (!fs::exists(header_path)) fail(ErrorCode::Io, "raster sidecar not found: " + header_path.string());

  nlohmann::json header;
  {
    std::ifstream in(header_path);
    try {
      in >> header;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Format, "malformed raster sidecar " + header_path.string() + ": " + e.what());
    }
  }
  const std::string dtype = header.value("dtype", "float32");
  if (dtype != "float32") fail(ErrorCode::Format, "unsupported raster dtype: " + dtype);
  if (header.value("bands", 1) != 1) fail(ErrorCode::Format, "only single-band rasters are supported");
  if (header.value("byte_order", std::string("little")) != "little") {
    fail(ErrorCode::Format, "unsupported byte order");
  }
  if (!header.contains("width") || !header.contains("height")) {
    fail(ErrorCode::Format, "raster sidecar lacks width/height");
  }
  const auto width = header["width"].get<std::size_t>();
  const auto height = header["height"].get<std::size_t>();
  if (width == 0 || height == 0) fail(ErrorCode::Format, "raster has zero extent");

  const std::size_t n = width * height;
  const auto file_size = fs::file_size(path);
  if (file_size != n * sizeof(float)) {
    fail(ErrorCode::Format, "raster payload is " + std::to_string(file_size) + " bytes, header implies " +
                                std::to_string(n * sizeof(float)));
  }
  std::vector<std::uint32_t> words(n);
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open raster: " + path.string());
    in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) fail(ErrorCode::Io, "short read on raster: " + path.string());
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(to_little(words[i]));
  Image img(width, height, std::move(data));
  if (header.contains("metadata") && header["metadata"].is_object()) img.metadata = header["metadata"];
  return img;
}

void save_raster(const Image& img, const fs::path& path) {
  if (img.empty()) fail(ErrorCode::InvalidArgument, "cannot save an empty (0x0) raster");
  const std::size_t n = img.size();
  std::vector<std::uint32_t> words(n);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  for (std::size_t i = 0; i < n; ++i) {
    words[i] = to_little(std::bit_cast<std::uint32_t>(img.masked(i) ? nan : img[i]));
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write raster: " + path.string());
    out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
  }
  nlohmann::json header = {{"format", "rawf32"}, {"version", 1},           {"width", img.width()},
                           {"height", img.height()}, {"bands", 1},          {"dtype", "float32"},
                           {"byte_order", "little"}, {"nodata", "NaN"}};
  if (!img.metadata.empty()) header["metadata"] = img.metadata;
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write raster sidecar: " + sidecar_path(path).string());
  out << header.dump(2) << '\n';
}

void write_png_gray8(const fs::path& path, std::size_t width, std::size_t height,
                     std::span<const std::uint8_t> pixels) {
  require(pixels.size() == width * height, "png pixel buffer size mismatch");
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) fail(ErrorCode::Io, "cannot write png: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(ErrorCode::Io, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + y * width));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

namespace {

// Linear interpolation between order statistics of sorted values.
double percentile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double to_db(float v) {
  constexpr double floor_power = 1e-30;
  return 10.0 * std::log10(std::max(static_cast<double>(v), floor_power));
}

std::uint8_t map_to_gray(double v, double lo, double hi) {
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(t * 255.0 + 0.5));
}

}  // namespace

std::vector<std::uint8_t> render_db_gray(const Image& img, double lo_percentile, double hi_percentile) {
  require(lo_percentile >= 0.0 && lo_percentile < hi_percentile && hi_percentile <= 1.0,
          "percentiles must satisfy 0 <= lo < hi <= 1");
  std::vector<double> db(img.size(), 0.0);
  std::vector<double> valid;
  valid.reserve(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (img.masked(i)) continue;
    db[i] = to_db(img[i]);
    valid.push_back(db[i]);
  }
  if (valid.empty()) fail(ErrorCode::InvalidArgument, "cannot render image: all pixels masked");
  std::sort(valid.begin(), valid.end());
  const double lo = percentile_sorted(valid, lo_percentile);
  const double hi = percentile_sorted(valid, hi_percentile);

  std::vector<std::uint8_t> gray(img.size(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (img.masked(i)) continue;
    gray[i] = hi > lo ? map_to_gray(db[i], lo, hi) : std::uint8_t{128};
  }
  return gray;
}

void export_png(const Image& img, const fs::path& path, double lo_percentile, double hi_percentile) {
  const auto gray = render_db_gray(img, lo_percentile, hi_percentile);
  write_png_gray8(path, img.width(), img.height(), gray);
}

void export_png_linear(const Image& img, const fs::path& path, double lo_value, double hi_value) {
  require(hi_value > lo_value, "linear png range must be increasing");
  std::vector<std::uint8_t> gray(img.size(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!img.masked(i)) gray[i] = map_to_gray(img[i], lo_value, hi_value);
  }
  write_png_gray8(path, img.width(), img.height(), gray);
}

PatchSet extract_patches(const Image& noisy, const Image& label, std::size_t patch_size,
                         std::size_t stride) {
  require(same_shape(noisy, label), "noisy and label images differ in size");
  require(patch_size >= 1 && stride >= 1, "patch size and stride must be positive");
  require(patch_size <= std::min(noisy.width(), noisy.height()), "patch larger than image");

  PatchSet set;
  set.patch_size = patch_size;
  set.stride = stride;
  const std::size_t w = noisy.width();
  for (std::size_t y0 = 0; y0 + patch_size <= noisy.height(); y0 += stride) {
    for (std::size_t x0 = 0; x0 + patch_size <= w; x0 += stride) {
      ++set.windows_total;
      bool clean = true;
      for (std::size_t y = y0; y < y0 + patch_size && clean; ++y) {
        for (std::size_t x = x0; x < x0 + patch_size; ++x) {
          if (label.masked(x, y) || noisy.masked(x, y)) {
            clean = false;
            break;
          }
        }
      }
      if (!clean) {
        ++set.windows_dropped;
        continue;
      }
      set.patches.push_back({noisy.crop(x0, y0, patch_size, patch_size),
                             label.crop(x0, y0, patch_size, patch_size)});
    }
  }
  return set;
}

}  // namespace despeck::raster
