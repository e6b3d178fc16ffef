#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "test_util.hpp"
#include "uemkit/spectral_data.hpp"

using namespace uem;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

SpectralCube random_cube(std::size_t l, std::size_t h, std::size_t w, std::uint64_t seed) {
  return cube_from_tensor(testing::uniform(Shape{l, h, w}, seed, 0.0, 1.0), uniform_wavelengths(l));
}

// Mean Pearson correlation between adjacent bands over all pixels.
double adjacent_band_correlation(const SpectralCube& c) {
  double total = 0.0;
  std::size_t pairs = 0;
  const std::size_t n = c.height * c.width;
  for (std::size_t l = 0; l + 1 < c.bands; ++l) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      ma += c.values[l * n + i];
      mb += c.values[(l + 1) * n + i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = c.values[l * n + i] - ma, b = c.values[(l + 1) * n + i] - mb;
      sab += a * b;
      saa += a * a;
      sbb += b * b;
    }
    if (saa > 0 && sbb > 0) {
      total += sab / std::sqrt(saa * sbb);
      ++pairs;
    }
  }
  return pairs ? total / pairs : 0.0;
}

}  // namespace

TEST_CASE("scube round trip is bit exact") {
  const auto dir = testing::scratch_dir("scube");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SpectralCube c = random_cube(4, 8, 8, seed);
    save_scube(c, dir / "a.scube");
    const SpectralCube d = load_scube(dir / "a.scube");
    CHECK(d.bands == 4);
    CHECK(d.height == 8);
    CHECK(d.width == 8);
    REQUIRE(d.values.size() == c.values.size());
    CHECK(std::memcmp(d.values.data(), c.values.data(), c.values.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("scube header layout") {
  const auto dir = testing::scratch_dir("scube_layout");
  SpectralCube c = random_cube(2, 3, 5, 1);
  save_scube(c, dir / "a.scube");
  std::ifstream is(dir / "a.scube", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  REQUIRE(bytes.size() == 17 + 2 * 3 * 5 * 4);
  CHECK(bytes.substr(0, 4) == "SCUB");
  CHECK(bytes[4] == 1);
  auto u32 = [&](std::size_t off) {
    return static_cast<unsigned>(static_cast<unsigned char>(bytes[off])) |
           static_cast<unsigned>(static_cast<unsigned char>(bytes[off + 1])) << 8 |
           static_cast<unsigned>(static_cast<unsigned char>(bytes[off + 2])) << 16 |
           static_cast<unsigned>(static_cast<unsigned char>(bytes[off + 3])) << 24;
  };
  CHECK(u32(5) == 2);
  CHECK(u32(9) == 3);
  CHECK(u32(13) == 5);
  float first = 0;
  std::memcpy(&first, bytes.data() + 17, 4);
  CHECK(first == c.at(0, 0, 0));
}

TEST_CASE("scube format errors are distinct") {
  const auto dir = testing::scratch_dir("scube_err");
  write_file(dir / "magic.scube", std::string("XXXX\x01") + std::string(12, '\0'));
  CHECK_THROWS_AS(load_scube(dir / "magic.scube"), BadMagic);

  std::string zero_bands = std::string("SCUB\x01", 5) + std::string("\0\0\0\0\x02\0\0\0\x02\0\0\0", 12);
  write_file(dir / "zero.scube", zero_bands);
  CHECK_THROWS_AS(load_scube(dir / "zero.scube"), InvalidHeader);

  std::string v2 = std::string("SCUB\x02", 5) + std::string("\x01\0\0\0\x01\0\0\0\x01\0\0\0", 12) + std::string(4, '\0');
  write_file(dir / "v2.scube", v2);
  CHECK_THROWS_AS(load_scube(dir / "v2.scube"), VersionMismatch);

  std::string trunc = std::string("SCUB\x01", 5) + std::string("\x01\0\0\0\x02\0\0\0\x02\0\0\0", 12) + std::string(6, '\0');
  write_file(dir / "trunc.scube", trunc);
  CHECK_THROWS_AS(load_scube(dir / "trunc.scube"), TruncatedFile);

  write_file(dir / "short.scube", "SCU");
  CHECK_THROWS_AS(load_scube(dir / "short.scube"), TruncatedFile);
  CHECK_THROWS_AS(load_scube(dir / "missing.scube"), IoError);
}

TEST_CASE("response csv parsing") {
  const auto dir = testing::scratch_dir("resp");
  write_file(dir / "r.csv",
             "wavelength_nm,r,g,b\n420,1,0,0\n500,0,1,0\n600,0,0,1\n700,0,0.5,0\n");
  const ResponseCurve r = load_response_csv(dir / "r.csv");
  REQUIRE(r.bands() == 4);
  CHECK(r.weights.shape() == Shape{3, 4});
  CHECK(r.weights[0] == 1.0);
  for (std::size_t l = 1; l < 4; ++l) CHECK(r.weights[l] == 0.0);
  CHECK(r.weights[4 + 3] == 0.5);
  CHECK(r.wavelengths_nm[2] == 600.0);

  write_file(dir / "shuffled.csv", "wavelength_nm,r,g,b\n500,1,0,0\n420,0,1,0\n");
  CHECK_THROWS_AS(load_response_csv(dir / "shuffled.csv"), NonAscending);
  write_file(dir / "cols.csv", "wavelength_nm,r,g,b\n420,1,0\n");
  CHECK_THROWS_AS(load_response_csv(dir / "cols.csv"), ColumnCount);
  write_file(dir / "neg.csv", "wavelength_nm,r,g,b\n420,1,-0.1,0\n");
  CHECK_NOTHROW(load_response_csv(dir / "neg.csv"));
  CHECK_THROWS_AS(load_response_csv(dir / "neg.csv", true), ConstraintViolation);

  save_response_csv(r, dir / "out.csv");
  const ResponseCurve back = load_response_csv(dir / "out.csv");
  CHECK(back.weights == r.weights);
  CHECK(back.wavelengths_nm == r.wavelengths_nm);
}

TEST_CASE("synth_scene is deterministic and bounded") {
  for (std::uint64_t seed : {0ull, 7ull, 123456789ull}) {
    const SpectralCube a = synth_scene(seed, 16, 12, 8, 2.0);
    const SpectralCube b = synth_scene(seed, 16, 12, 8, 2.0);
    CHECK(a.values == b.values);
    CHECK_NOTHROW(a.validate());
    float lo = 1, hi = 0;
    for (float v : a.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= 0.0f);
    CHECK(hi <= 1.0f);
    CHECK(hi == 1.0f);
  }
  CHECK(synth_scene(1, 8, 8, 4, 1.0).values != synth_scene(2, 8, 8, 4, 1.0).values);
  CHECK_THROWS(synth_scene(0, 0, 8, 4, 1.0));
  CHECK_THROWS(synth_scene(0, 8, 8, 0, 1.0));
  CHECK_THROWS(synth_scene(0, 8, 8, 4, -1.0));
}

TEST_CASE("adjacent-band correlation grows with smoothness") {
  double rough = 0.0, smooth = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    rough += adjacent_band_correlation(synth_scene(seed, 16, 16, 8, 0.0));
    smooth += adjacent_band_correlation(synth_scene(seed, 16, 16, 8, 2.0));
  }
  rough /= 100;
  smooth /= 100;
  CHECK(std::abs(rough) < 0.1);
  CHECK(smooth > rough + 0.3);
}

TEST_CASE("crop_patches tiles from the top left") {
  const SpectralCube c8 = random_cube(2, 8, 8, 3);
  auto one = crop_patches(c8, 8, 8);
  REQUIRE(one.size() == 1);
  CHECK(one[0].values == c8.values);

  auto four = crop_patches(c8, 4, 4);
  REQUIRE(four.size() == 4);
  CHECK(four[3].at(1, 2, 1) == c8.at(1, 6, 5));
  CHECK(four[1].at(0, 0, 0) == c8.at(0, 0, 4));

  const SpectralCube c9 = random_cube(2, 9, 9, 4);
  CHECK(crop_patches(c9, 4, 4).size() == 4);
  auto overlap = crop_patches(c9, 5, 2);
  CHECK(overlap.size() == 9);
  for (std::size_t p = 0; p < overlap.size(); ++p) {
    const std::size_t oy = (p / 3) * 2, ox = (p % 3) * 2;
    CHECK(overlap[p].at(1, 4, 3) == c9.at(1, oy + 4, ox + 3));
    CHECK(overlap[p].wavelengths_nm == c9.wavelengths_nm);
  }
  CHECK_THROWS(crop_patches(c8, 9, 1));
}

TEST_CASE("gaussian noise statistics") {
  const Tensor zero(Shape{1, 100, 1000});
  const Tensor same = add_gaussian_noise(zero, 0.0, 5);
  CHECK(same == zero);
  const double sigma = 0.05;
  const Tensor n = add_gaussian_noise(zero, sigma, 5);
  CHECK(n == add_gaussian_noise(zero, sigma, 5));
  CHECK(n != add_gaussian_noise(zero, sigma, 6));
  double mean = 0;
  for (std::size_t i = 0; i < n.size(); ++i) mean += n[i];
  mean /= n.size();
  double var = 0;
  for (std::size_t i = 0; i < n.size(); ++i) var += (n[i] - mean) * (n[i] - mean);
  const double sd = std::sqrt(var / (n.size() - 1));
  CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(1e5));
  CHECK(std::abs(sd - sigma) / sigma < 0.02);
  CHECK_THROWS(add_gaussian_noise(zero, -1.0, 1));
}

TEST_CASE("quadrature weights") {
  CHECK(quadrature_weights({500.0}) == std::vector<double>{1.0});
  const auto u = quadrature_weights(uniform_wavelengths(8));
  for (double w : u) CHECK(w == doctest::Approx(40.0));
  const auto t = quadrature_weights({400.0, 410.0, 440.0});
  CHECK(t[0] == doctest::Approx(5.0));
  CHECK(t[1] == doctest::Approx(20.0));
  CHECK(t[2] == doctest::Approx(15.0));
}

TEST_CASE("cube validation") {
  SpectralCube c = random_cube(2, 2, 2, 9);
  c.values[0] = 1.5f;
  CHECK_THROWS_AS(c.validate(), DataError);
  c = random_cube(2, 2, 2, 9);
  c.wavelengths_nm = {500, 500};
  CHECK_THROWS_AS(c.validate(), DataError);
}
