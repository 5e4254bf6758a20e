#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "error.hpp"

namespace despeck::metrics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same(const Image& a, const Image& b) {
  require(raster::same_shape(a, b), "images differ in size");
}

void check_roi(const Image& img, const Roi& roi) {
  require(roi.width > 0 && roi.height > 0, "ROI is empty");
  require(roi.x + roi.width <= img.width() && roi.y + roi.height <= img.height(),
          "ROI outside image bounds");
}

double mse_linear(const Image& a, const Image& b, const Image* also_valid) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.masked(i) || b.masked(i) || (also_valid && also_valid->masked(i))) continue;
    const double d = static_cast<double>(a[i]) - b[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) fail(ErrorCode::InvalidArgument, "no pixels valid in all inputs");
  return sum / static_cast<double>(n);
}

double gain_db(double num, double den) {
  if (den == 0.0) return kInf;
  if (num == 0.0) return -kInf;
  return 10.0 * std::log10(num / den);
}

}  // namespace

EightBitPair to_8bit_pair(const Image& reference, const Image& other) {
  require_same(reference, other);
  double lo = kInf;
  double hi = -kInf;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    if (reference.masked(i)) continue;
    lo = std::min(lo, static_cast<double>(reference[i]));
    hi = std::max(hi, static_cast<double>(reference[i]));
  }
  if (!(hi > lo)) fail(ErrorCode::InvalidArgument, "reference image has zero range (constant or fully masked)");

  EightBitPair out;
  out.offset = lo;
  out.scale = 255.0 / (hi - lo);
  const auto quantize = [&](float v) {
    const double t = std::clamp((v - lo) * out.scale, 0.0, 255.0);
    return static_cast<std::uint8_t>(std::floor(t + 0.5));
  };
  out.reference.resize(reference.size());
  out.other.resize(reference.size());
  out.valid.resize(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    out.reference[i] = quantize(reference[i]);
    out.other[i] = quantize(other[i]);
    out.valid[i] = (reference.masked(i) || other.masked(i)) ? 0 : 1;
  }
  return out;
}

double psnr_from_mse(double mse) {
  if (mse == 0.0) return kInf;
  return 20.0 * std::log10(255.0 / std::sqrt(mse));
}

double psnr(const Image& x_hat, const Image& x_ref) {
  const auto q = to_8bit_pair(x_ref, x_hat);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < q.valid.size(); ++i) {
    if (!q.valid[i]) continue;
    const double d = static_cast<double>(q.other[i]) - q.reference[i];
    sum += d * d;
    ++n;
  }
  if (n == 0) fail(ErrorCode::InvalidArgument, "psnr: no valid pixels");
  return psnr_from_mse(sum / static_cast<double>(n));
}

double ssim_u8(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b,
               std::span<const std::uint8_t> valid, std::size_t width, std::size_t height) {
  const std::size_t win = kSsimWindow;
  require(width >= win && height >= win, "image smaller than the SSIM window");
  require(a.size() == width * height && b.size() == a.size() && valid.size() == a.size(),
          "ssim buffer size mismatch");

  // Summed-area tables; exact in double for 8-bit data at any practical size.
  const std::size_t sw = width + 1;
  std::vector<double> sa(sw * (height + 1), 0.0), sb(sa), saa(sa), sbb(sa), sab(sa), sv(sa);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t i = y * width + x;
      const double va = a[i], vb = b[i];
      const std::size_t k = (y + 1) * sw + (x + 1);
      const auto acc = [&](std::vector<double>& t, double v) {
        t[k] = v + t[k - 1] + t[k - sw] - t[k - sw - 1];
      };
      acc(sa, va);
      acc(sb, vb);
      acc(saa, va * va);
      acc(sbb, vb * vb);
      acc(sab, va * vb);
      acc(sv, valid[i] ? 0.0 : 1.0);
    }
  }
  const auto box = [&](const std::vector<double>& t, std::size_t x, std::size_t y) {
    const std::size_t x1 = x + win, y1 = y + win;
    return t[y1 * sw + x1] - t[y * sw + x1] - t[y1 * sw + x] + t[y * sw + x];
  };

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const double n = static_cast<double>(win * win);
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t y = 0; y + win <= height; ++y) {
    for (std::size_t x = 0; x + win <= width; ++x) {
      if (box(sv, x, y) != 0.0) continue;
      const double ma = box(sa, x, y) / n;
      const double mb = box(sb, x, y) / n;
      const double va = box(saa, x, y) / n - ma * ma;
      const double vb = box(sbb, x, y) / n - mb * mb;
      const double cov = box(sab, x, y) / n - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  if (windows == 0) fail(ErrorCode::InvalidArgument, "ssim: no fully valid window");
  return total / static_cast<double>(windows);
}

double ssim(const Image& x_hat, const Image& x_ref) {
  const auto q = to_8bit_pair(x_ref, x_hat);
  return ssim_u8(q.other, q.reference, q.valid, x_ref.width(), x_ref.height());
}

double despeckling_gain(const Image& x_hat, const Image& x_ref, const Image& y,
                        GainConvention convention) {
  require_same(x_hat, x_ref);
  require_same(x_hat, y);
  const double den = mse_linear(x_hat, x_ref, &y);
  const double num = convention == GainConvention::AsPrinted ? mse_linear(x_hat, y, &x_ref)
                                                             : mse_linear(y, x_ref, &x_hat);
  return gain_db(num, den);
}

double epi_from_gp(double gp) { return gp < 2.0 ? 1.0 - std::abs(1.0 - gp) : 0.0; }

namespace {

// Sum of Sobel gradient magnitudes over interior pixels whose 3x3 window is
// unmasked in both images.
double sobel_sum(const Image& img, const Image& other) {
  const std::size_t w = img.width(), h = img.height();
  double sum = 0.0;
  for (std::size_t y = 1; y + 1 < h; ++y) {
    for (std::size_t x = 1; x + 1 < w; ++x) {
      bool ok = true;
      for (std::size_t dy = 0; dy < 3 && ok; ++dy) {
        for (std::size_t dx = 0; dx < 3; ++dx) {
          if (img.masked(x + dx - 1, y + dy - 1) || other.masked(x + dx - 1, y + dy - 1)) {
            ok = false;
            break;
          }
        }
      }
      if (!ok) continue;
      const auto p = [&](int dx, int dy) {
        return static_cast<double>(img(x + static_cast<std::size_t>(dx + 1) - 1,
                                       y + static_cast<std::size_t>(dy + 1) - 1));
      };
      const double gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
      const double gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
      sum += std::sqrt(gx * gx + gy * gy);
    }
  }
  return sum;
}

}  // namespace

EdgePreservation epi(const Image& x_hat, const Image& x_ref) {
  require_same(x_hat, x_ref);
  require(x_ref.width() >= 3 && x_ref.height() >= 3, "EPI needs images of at least 3x3");
  const double ref = sobel_sum(x_ref, x_hat);
  if (!(ref > 0.0)) fail(ErrorCode::Numeric, "EPI undefined: reference has no gradient");
  EdgePreservation out;
  out.gp = sobel_sum(x_hat, x_ref) / ref;
  out.epi = epi_from_gp(out.gp);
  return out;
}

RoiMoments roi_moments(const Image& img, const Roi& roi) {
  check_roi(img, roi);
  RoiMoments m;
  double m2 = 0.0;
  for (std::size_t y = roi.y; y < roi.y + roi.height; ++y) {
    for (std::size_t x = roi.x; x < roi.x + roi.width; ++x) {
      if (img.masked(x, y)) continue;
      ++m.count;
      const double v = img(x, y);
      const double d = v - m.mean;
      m.mean += d / static_cast<double>(m.count);
      m2 += d * (v - m.mean);
    }
  }
  require(m.count >= 100, "ROI needs at least 100 unmasked pixels");
  m.variance = m2 / static_cast<double>(m.count);
  return m;
}

double enl(const Image& img, const Roi& roi) {
  const auto m = roi_moments(img, roi);
  if (!(m.variance > 0.0)) fail(ErrorCode::Numeric, "ENL undefined: ROI has zero variance");
  return m.mean * m.mean / m.variance;
}

double cx(const Image& img, const Roi& roi) {
  const auto m = roi_moments(img, roi);
  if (m.mean == 0.0) fail(ErrorCode::Numeric, "Cx undefined: ROI has zero mean");
  return std::sqrt(m.variance) / m.mean;
}

double cnn_index(const Image& img, const Site& site) {
  require(site.row >= 1 && site.col >= 1 && site.row + 1 < img.height() && site.col + 1 < img.width(),
          "scatterer site must be at least one pixel from every border");
  double sum = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      if (dx == 0 && dy == 0) continue;
      const std::size_t x = site.col + static_cast<std::size_t>(dx + 1) - 1;
      const std::size_t y = site.row + static_cast<std::size_t>(dy + 1) - 1;
      require(!img.masked(x, y), "scatterer neighbourhood contains masked pixels");
      sum += img(x, y);
    }
  }
  require(!img.masked(site.col, site.row), "scatterer site is masked");
  const double nn = sum / 8.0;
  if (!(nn > 0.0)) fail(ErrorCode::Numeric, "C_NN undefined: zero neighbour mean");
  const double cf = img(site.col, site.row);
  return cf > 0.0 ? 10.0 * std::log10(cf / nn) : -kInf;
}

RatioStats ratio_stats(const Image& y, const Image& x_hat) {
  require_same(y, x_hat);
  RatioStats out;
  out.ratio = Image(y.width(), y.height());
  std::size_t n = 0;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y.masked(i) || x_hat.masked(i)) {
      out.ratio.set_masked(i);
      continue;
    }
    if (!(x_hat[i] > 0.0f)) {
      out.ratio.set_masked(i);
      ++out.excluded;
      continue;
    }
    const double r = static_cast<double>(y[i]) / x_hat[i];
    out.ratio.set(i, static_cast<float>(r));
    ++n;
    const double d = r - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (r - mean);
  }
  if (n == 0) fail(ErrorCode::Numeric, "ratio image has no valid pixels");
  out.mor = mean;
  out.vor = m2 / static_cast<double>(n);
  return out;
}

MetricReport full_report(const Image& x_hat, const Image* x_ref, const Image& y, const Roi& roi,
                         std::optional<Site> scatter_site, GainConvention convention) {
  require_same(x_hat, y);
  MetricReport r;
  if (x_ref) {
    require_same(x_hat, *x_ref);
    r.psnr = psnr(x_hat, *x_ref);
    r.ssim = ssim(x_hat, *x_ref);
    r.dg = despeckling_gain(x_hat, *x_ref, y, convention);
    const auto e = epi(x_hat, *x_ref);
    r.gp = e.gp;
    r.epi = e.epi;
  }
  const auto m = roi_moments(x_hat, roi);
  r.enl = m.variance > 0.0 ? m.mean * m.mean / m.variance : kInf;
  r.cx = m.mean != 0.0 ? std::sqrt(m.variance) / m.mean : kInf;
  if (scatter_site) r.cnn_db = cnn_index(x_hat, *scatter_site);
  const auto ratio = ratio_stats(y, x_hat);
  r.mor = ratio.mor;
  r.vor = ratio.vor;
  return r;
}

nlohmann::json number_to_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  return v;
}

std::optional<double> number_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "+inf" || s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    fail(ErrorCode::Format, "unexpected metric string value: " + s);
  }
  return j.get<double>();
}

namespace {

template <typename F>
void for_each_field(F&& f, MetricReport& r) {
  f("psnr", r.psnr);
  f("ssim", r.ssim);
  f("dg", r.dg);
  f("gp", r.gp);
  f("epi", r.epi);
  f("enl", r.enl);
  f("cx", r.cx);
  f("cnn_db", r.cnn_db);
  f("mor", r.mor);
  f("vor", r.vor);
}

}  // namespace

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json j = nlohmann::json::object();
  MetricReport copy = report;
  for_each_field(
      [&](const char* name, std::optional<double>& v) {
        j[name] = v ? number_to_json(*v) : nlohmann::json(nullptr);
      },
      copy);
  return j;
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  for_each_field(
      [&](const char* name, std::optional<double>& v) {
        if (!j.contains(name)) fail(ErrorCode::Format, std::string("metric report lacks field ") + name);
        v = number_from_json(j.at(name));
      },
      r);
  return r;
}

}  // namespace despeck::metrics
