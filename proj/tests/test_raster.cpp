#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "error.hpp"
#include "raster.hpp"
#include "test_util.hpp"

using despeck::Error;
using despeck::ErrorCode;
using namespace despeck::raster;

namespace {

std::vector<char> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_raw(const std::filesystem::path& p, const std::vector<float>& values, std::size_t w,
               std::size_t h, const std::string& dtype = "float32") {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  std::ofstream side(sidecar_path(p));
  side << nlohmann::json{{"width", w}, {"height", h}, {"bands", 1}, {"dtype", dtype}}.dump();
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

}  // namespace

TEST_CASE("load_raster reads a 2x2 payload") {
  const auto dir = scratch_dir("raster");
  write_raw(dir / "a.rawf32", {1.0f, 2.0f, 3.0f, 4.0f}, 2, 2);
  const Image img = load_raster(dir / "a.rawf32");
  CHECK(img.width() == 2);
  CHECK(img.height() == 2);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(img[i] == static_cast<float>(i + 1));
    CHECK_FALSE(img.masked(i));
  }
}

TEST_CASE("NaN and negative payload values become masked") {
  const auto dir = scratch_dir("raster");
  const float nan = std::numeric_limits<float>::quiet_NaN();
  write_raw(dir / "a.rawf32", {1.0f, -2.0f, 3.0f, nan}, 2, 2);
  const Image img = load_raster(dir / "a.rawf32");
  CHECK(img.masked(3));
  CHECK(img.masked(1));
  CHECK_FALSE(img.masked(0));
  CHECK(img.valid_count() == 2);
}

TEST_CASE("load_raster errors") {
  const auto dir = scratch_dir("raster");
  CHECK(code_of([&] { load_raster(dir / "missing.rawf32"); }) == ErrorCode::Io);

  write_raw(dir / "short.rawf32", {1.0f, 2.0f, 3.0f}, 2, 2);
  CHECK(code_of([&] { load_raster(dir / "short.rawf32"); }) == ErrorCode::Format);

  write_raw(dir / "f64.rawf32", {1.0f, 2.0f, 3.0f, 4.0f}, 2, 2, "float64");
  CHECK(code_of([&] { load_raster(dir / "f64.rawf32"); }) == ErrorCode::Format);
}

TEST_CASE("save/load round trip is bit-identical over random images") {
  const auto dir = scratch_dir("raster");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Image img = random_image(17 + seed, 9 + 2 * seed, seed, 1e-6, 1e3);
    despeck::Rng rng(seed * 31);
    for (std::size_t i = 0; i < img.size(); ++i) {
      if (rng.uniform() < 0.1) img.set_masked(i);
    }
    img.set(0, 0.0f);
    img.metadata = {{"seed", seed}};
    const auto path = dir / ("r" + std::to_string(seed) + ".rawf32");
    save_raster(img, path);
    const Image back = load_raster(path);
    CHECK(back == img);
    CHECK(back.metadata == img.metadata);

    const auto again = dir / ("s" + std::to_string(seed) + ".rawf32");
    save_raster(back, again);
    CHECK(file_bytes(path) == file_bytes(again));
  }
}

TEST_CASE("masked pixels are written as NaN") {
  const auto dir = scratch_dir("raster");
  Image img(2, 1, 5.0f);
  img.set_masked(1);
  save_raster(img, dir / "m.rawf32");
  const auto bytes = file_bytes(dir / "m.rawf32");
  REQUIRE(bytes.size() == 8);
  float v[2];
  std::memcpy(v, bytes.data(), 8);
  CHECK(v[0] == 5.0f);
  CHECK(std::isnan(v[1]));
}

TEST_CASE("saving a 0x0 image fails") {
  const auto dir = scratch_dir("raster");
  CHECK(code_of([&] { save_raster(Image{}, dir / "e.rawf32"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("saving into a missing directory is an I/O error") {
  const auto dir = scratch_dir("raster");
  CHECK(code_of([&] { save_raster(Image(2, 2, 1.0f), dir / "no" / "x.rawf32"); }) == ErrorCode::Io);
}

TEST_CASE("PNG rendering") {
  SUBCASE("constant image maps to mid-gray") {
    const auto gray = render_db_gray(Image(8, 8, 0.3f), 0.02, 0.98);
    for (auto g : gray) CHECK(g == 128);
  }
  SUBCASE("two levels keep their order") {
    Image img(10, 10, 1.0f);
    for (std::size_t i = 50; i < 100; ++i) img.set(i, 10.0f);
    const auto gray = render_db_gray(img, 0.02, 0.98);
    CHECK(gray[99] > gray[0]);
  }
  SUBCASE("random image spans the full range") {
    const auto gray = render_db_gray(random_image(64, 64, 3), 0.02, 0.98);
    CHECK(*std::min_element(gray.begin(), gray.end()) == 0);
    CHECK(*std::max_element(gray.begin(), gray.end()) == 255);
  }
  SUBCASE("masked pixels render black") {
    Image img = random_image(16, 16, 4);
    img.set_masked(5);
    CHECK(render_db_gray(img, 0.02, 0.98)[5] == 0);
  }
  SUBCASE("invariant to a positive rescaling") {
    const Image img = random_image(64, 64, 5);
    for (double c : {0.5, 4.0, 1e3}) {
      CHECK(render_db_gray(img.scaled(c), 0.02, 0.98) == render_db_gray(img, 0.02, 0.98));
    }
  }
  SUBCASE("fully masked image is rejected") {
    Image img(4, 4, std::numeric_limits<float>::quiet_NaN());
    CHECK_THROWS_AS(render_db_gray(img, 0.02, 0.98), Error);
  }
  SUBCASE("export writes a PNG file") {
    const auto dir = scratch_dir("raster");
    export_png(random_image(32, 32, 6), dir / "a.png");
    const auto bytes = file_bytes(dir / "a.png");
    REQUIRE(bytes.size() > 8);
    CHECK(bytes[1] == 'P');
    CHECK(bytes[2] == 'N');
    CHECK(bytes[3] == 'G');
  }
}

namespace {

std::size_t brute_force_windows(const Image& label, std::size_t p, std::size_t s) {
  std::size_t n = 0;
  for (std::size_t y0 = 0; y0 < label.height(); ++y0) {
    for (std::size_t x0 = 0; x0 < label.width(); ++x0) {
      if (x0 % s || y0 % s || x0 + p > label.width() || y0 + p > label.height()) continue;
      bool ok = true;
      for (std::size_t y = y0; y < y0 + p; ++y)
        for (std::size_t x = x0; x < x0 + p; ++x) ok = ok && !label.masked(x, y);
      n += ok;
    }
  }
  return n;
}

}  // namespace

TEST_CASE("patch extraction counts") {
  const Image a(80, 80, 1.0f);
  CHECK(extract_patches(a, a, 40, 40).patches.size() == 4);

  const Image b(100, 100, 1.0f);
  const PatchSet set = extract_patches(b, b, 40, 20);
  CHECK(set.patches.size() == 16);
  CHECK(set.windows_total == 16);

  const Image masked(40, 40, std::numeric_limits<float>::quiet_NaN());
  const Image c(40, 40, 1.0f);
  const PatchSet none = extract_patches(c, masked, 40, 40);
  CHECK(none.patches.empty());
  CHECK(none.windows_dropped == 1);
}

TEST_CASE("patch extraction matches a brute-force count under random masking") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    despeck::Rng rng(seed);
    const std::size_t w = 50 + rng.uniform_index(40), h = 50 + rng.uniform_index(40);
    Image label = random_image(w, h, seed);
    for (int k = 0; k < 6; ++k) label.set_masked(rng.uniform_index(label.size()));
    const Image noisy = random_image(w, h, seed + 100);
    for (std::size_t s : {7, 13, 20}) {
      const PatchSet set = extract_patches(noisy, label, 20, s);
      CHECK(set.patches.size() == brute_force_windows(label, 20, s));
      for (const auto& p : set.patches) {
        CHECK(p.noisy.width() == 20);
        CHECK(p.label.height() == 20);
        CHECK(p.label.valid_count() == 400);
      }
    }
  }
}

TEST_CASE("patch extraction preconditions") {
  CHECK_THROWS_AS(extract_patches(Image(10, 10, 1.0f), Image(10, 11, 1.0f), 5, 5), Error);
  CHECK_THROWS_AS(extract_patches(Image(10, 10, 1.0f), Image(10, 10, 1.0f), 11, 5), Error);
}
