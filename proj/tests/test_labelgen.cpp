#include <doctest.h>

#include <cmath>
#include <functional>

#include "error.hpp"
#include "labelgen.hpp"
#include "speckle.hpp"
#include "test_util.hpp"

using despeck::Error;
using despeck::metrics::Roi;
using despeck::raster::Image;
using namespace despeck::labelgen;

namespace {

std::vector<Image> speckled_stack(const Image& clean, double looks, std::size_t depth, std::uint64_t seed) {
  std::vector<Image> out;
  for (std::size_t t = 0; t < depth; ++t) {
    out.push_back(despeck::speckle::apply_multiplicative(
        clean, despeck::speckle::sample_speckle(clean.width(), clean.height(), {looks}, seed + t)));
  }
  return out;
}

// Two-level scene: left half at 0.01, right half at 0.05.
Image two_level(std::size_t w, std::size_t h) {
  Image img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.set(x, y, x < w / 2 ? 0.01f : 0.05f);
  return img;
}

double simpson(const std::function<double(double)>& f, double a, double b, std::size_t n) {
  const double h = (b - a) / static_cast<double>(n);
  double s = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + h * static_cast<double>(i));
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("temporal std of hand-computed series") {
  const TemporalStack s({Image(1, 1, 1.0f), Image(1, 1, 2.0f), Image(1, 1, 3.0f)});
  CHECK(temporal_std(s)[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(s.temporal_mean()[0] == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(synthesize_label(s, 0.1).masked(0));
  CHECK_FALSE(synthesize_label(s, 1.0).masked(0));
}

TEST_CASE("identical images give zero std and an exact label") {
  const Image level(6, 5, 7.0f);
  const TemporalStack s({level, level, level, level});
  const Image z = temporal_std(s);
  for (float v : z.data()) CHECK(v == 0.0f);
  const Image label = synthesize_label(s);
  CHECK(label == level);
}

TEST_CASE("std scales with the images") {
  const auto stack = speckled_stack(Image(16, 16, 1.0f), 2.0, 5, 3);
  std::vector<Image> scaled;
  for (const auto& img : stack) scaled.push_back(img.scaled(3.5));
  const Image z = temporal_std(TemporalStack(stack));
  const Image zc = temporal_std(TemporalStack(scaled));
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(zc[i] == doctest::Approx(3.5 * z[i]).epsilon(1e-5));
}

TEST_CASE("masked timestamps are skipped per pixel") {
  Image a(2, 1, 1.0f), b(2, 1, 3.0f), c(2, 1, 5.0f);
  c.set_masked(0);
  b.set_masked(1);
  c.set_masked(1);
  const TemporalStack s({a, b, c});
  CHECK(s.temporal_mean()[0] == doctest::Approx(2.0));
  CHECK(temporal_std(s)[0] == doctest::Approx(std::sqrt(2.0)));
  CHECK(temporal_std(s).masked(1));
  CHECK(synthesize_label(s, 10.0).masked(1));
}

TEST_CASE("stack preconditions") {
  CHECK_THROWS_AS(TemporalStack({Image(2, 2, 1.0f)}), Error);
  CHECK_THROWS_AS(TemporalStack({Image(2, 2, 1.0f), Image(3, 2, 1.0f)}), Error);
  const TemporalStack s({Image(2, 2, 1.0f), Image(2, 2, 1.0f)});
  CHECK_THROWS_AS(synthesize_label(s, 0.0), Error);
}

TEST_CASE("label equals the temporal mean wherever it is unmasked") {
  const TemporalStack s(speckled_stack(random_image(40, 40, 2, 0.01, 0.3), 5.0, 8, 20));
  const Image label = synthesize_label(s, 0.05);
  const Image& mean = s.temporal_mean();
  const Image& z = s.temporal_std();
  std::size_t unmasked = 0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    CHECK(label.masked(i) == (z[i] > 0.05f));
    if (!label.masked(i)) {
      CHECK(label[i] == mean[i]);
      ++unmasked;
    }
  }
  CHECK(unmasked > 0);
  CHECK(unmasked < label.size());
}

TEST_CASE("masking is monotone in the threshold") {
  const TemporalStack s(speckled_stack(random_image(48, 48, 4, 0.01, 0.5), 3.0, 6, 50));
  std::size_t prev = 0;
  for (double nu : {0.005, 0.01, 0.03, 0.1, 0.3, 1.0}) {
    const std::size_t valid = synthesize_label(s, nu).valid_count();
    CHECK(valid >= prev);
    prev = valid;
  }
}

TEST_CASE("16-epoch L=5 stack over a two-level scene") {
  const Image clean = two_level(200, 200);
  const TemporalStack s(speckled_stack(clean, 5.0, 16, 1000));
  const Image label = synthesize_label(s);

  CHECK(static_cast<double>(label.valid_count()) >= 0.95 * static_cast<double>(label.size()));

  // The label is a 16-draw average of unit-mean L=5 speckle, i.e. Gamma(80, 1/80)
  // times the level. Its in-band fraction follows from integrating that density.
  const double p_within =
      simpson([](double g) { return despeck::speckle::gamma_pdf(g, 80.0); }, 0.9, 1.1, 2000);
  std::size_t within = 0, within_4sd = 0, n = 0;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (label.masked(i)) continue;
    const double rel = std::abs(label[i] / clean[i] - 1.0);
    within += rel <= 0.1;
    within_4sd += rel <= 4.0 / std::sqrt(80.0);
    ++n;
  }
  const double frac = static_cast<double>(within) / static_cast<double>(n);
  const double se = std::sqrt(p_within * (1.0 - p_within) / static_cast<double>(n));
  CHECK(std::abs(frac - p_within) < 4.0 * se);
  CHECK(static_cast<double>(within_4sd) >= 0.99 * static_cast<double>(n));
}

TEST_CASE("residual ENL grows with stack depth") {
  const Image clean(120, 120, 0.05f);
  const Roi roi{10, 10, 100, 100};
  const double enl16 = residual_enl(synthesize_label(TemporalStack(speckled_stack(clean, 5.0, 16, 7))), roi);
  CHECK(enl16 == doctest::Approx(80.0).epsilon(15.0 / 80.0));
  const double enl2 = residual_enl(synthesize_label(TemporalStack(speckled_stack(clean, 5.0, 2, 70))), roi);
  CHECK(enl2 == doctest::Approx(10.0).epsilon(0.3));
}

TEST_CASE("residual ENL of a noiseless label is rejected") {
  const Image label(20, 20, 0.5f);
  CHECK_THROWS_AS(residual_enl(label, Roi{0, 0, 20, 20}), Error);
}

TEST_CASE("load_stack reads rasters in filename order") {
  const auto dir = scratch_dir("stack");
  save_raster(Image(3, 3, 2.0f), dir / "b.rawf32");
  save_raster(Image(3, 3, 1.0f), dir / "a.rawf32");
  save_raster(Image(3, 3, 3.0f), dir / "c.rawf32");
  const TemporalStack s = load_stack(dir);
  REQUIRE(s.depth() == 3);
  CHECK(s.images()[0][0] == 1.0f);
  CHECK(s.images()[2][0] == 3.0f);
  CHECK_THROWS_AS(load_stack(dir / "missing"), Error);
}
