#include "uemkit/spectral_data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace uem {

static_assert(std::endian::native == std::endian::little,
              ".scube I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic{'S', 'C', 'U', 'B'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::size_t kHeaderBytes = 17;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": cannot parse number '" + s + "'");
  }
}

}  // namespace

std::vector<double> uniform_wavelengths(std::size_t bands, double min_nm, double max_nm) {
  std::vector<double> wl(bands);
  for (std::size_t l = 0; l < bands; ++l) {
    wl[l] = bands == 1 ? min_nm
                       : min_nm + (max_nm - min_nm) * static_cast<double>(l) /
                                      static_cast<double>(bands - 1);
  }
  return wl;
}

std::vector<double> quadrature_weights(const std::vector<double>& wl) {
  const std::size_t n = wl.size();
  if (n <= 1) return std::vector<double>(n, 1.0);
  const double step = (wl.back() - wl.front()) / static_cast<double>(n - 1);
  bool uniform = true;
  for (std::size_t i = 1; i < n; ++i) {
    if (std::abs((wl[i] - wl[i - 1]) - step) > 1e-9 * std::max(1.0, std::abs(step))) uniform = false;
  }
  if (uniform) return std::vector<double>(n, step);
  std::vector<double> q(n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double h = 0.5 * (wl[i + 1] - wl[i]);
    q[i] += h;
    q[i + 1] += h;
  }
  return q;
}

Tensor SpectralCube::to_tensor() const {
  Tensor t(Shape{bands, height, width});
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<double>(values[i]);
  return t;
}

void SpectralCube::validate() const {
  if (bands == 0 || height == 0 || width == 0) {
    throw InvalidHeader("spectral cube has a zero dimension");
  }
  if (values.size() != bands * height * width) {
    throw InvalidHeader("spectral cube value count does not match its dimensions");
  }
  if (wavelengths_nm.size() != bands) {
    throw InvalidHeader("spectral cube needs one wavelength per band");
  }
  for (std::size_t l = 1; l < bands; ++l) {
    if (!(wavelengths_nm[l] > wavelengths_nm[l - 1])) {
      throw NonAscending("spectral cube wavelengths must be strictly ascending");
    }
  }
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("spectral cube values must lie in [0,1]");
  }
}

SpectralCube cube_from_tensor(const Tensor& t, std::vector<double> wavelengths_nm) {
  if (t.rank() != 3) throw ShapeError("cube_from_tensor: expected {L,H,W}, got " + shape_str(t.shape()));
  SpectralCube c;
  c.bands = t.dim(0);
  c.height = t.dim(1);
  c.width = t.dim(2);
  c.wavelengths_nm = std::move(wavelengths_nm);
  c.values.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) c.values[i] = static_cast<float>(t[i]);
  c.validate();
  return c;
}

void save_scube(const SpectralCube& cube, const std::filesystem::path& path) {
  cube.validate();
  std::string buf(kMagic.begin(), kMagic.end());
  buf.push_back(static_cast<char>(kVersion));
  put_u32(buf, static_cast<std::uint32_t>(cube.bands));
  put_u32(buf, static_cast<std::uint32_t>(cube.height));
  put_u32(buf, static_cast<std::uint32_t>(cube.width));
  const std::size_t off = buf.size();
  buf.resize(off + cube.values.size() * sizeof(float));
  std::memcpy(buf.data() + off, cube.values.data(), cube.values.size() * sizeof(float));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

SpectralCube load_scube(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 4) throw TruncatedFile(path.string() + ": shorter than the magic number");
  if (!std::equal(kMagic.begin(), kMagic.end(), buf.begin())) {
    throw BadMagic(path.string() + ": not an .scube file (bad magic)");
  }
  if (buf.size() < kHeaderBytes) throw TruncatedFile(path.string() + ": truncated header");
  const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
  if (p[4] != kVersion) {
    throw VersionMismatch(path.string() + ": unsupported .scube version " + std::to_string(p[4]));
  }
  SpectralCube c;
  c.bands = get_u32(p + 5);
  c.height = get_u32(p + 9);
  c.width = get_u32(p + 13);
  if (c.bands == 0 || c.height == 0 || c.width == 0) {
    throw InvalidHeader(path.string() + ": header has a zero dimension");
  }
  const std::size_t n = c.bands * c.height * c.width;
  if (buf.size() < kHeaderBytes + n * sizeof(float)) {
    throw TruncatedFile(path.string() + ": expected " + std::to_string(n) + " values");
  }
  c.values.resize(n);
  std::memcpy(c.values.data(), buf.data() + kHeaderBytes, n * sizeof(float));
  c.wavelengths_nm = uniform_wavelengths(c.bands);
  c.validate();
  return c;
}

ResponseCurve load_response_csv(const std::filesystem::path& path, bool constrained_positive) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError(path.string() + ": empty response file");
  const auto header = split_csv(trim(line));
  const std::vector<std::string> expected{"wavelength_nm", "r", "g", "b"};
  if (header.size() != expected.size()) {
    throw ColumnCount(path.string() + ": header must be wavelength_nm,r,g,b");
  }
  std::vector<double> wl;
  std::vector<std::array<double, 3>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != 4) {
      throw ColumnCount(where + ": expected 4 columns, got " + std::to_string(cells.size()));
    }
    wl.push_back(parse_double(cells[0], where));
    rows.push_back({parse_double(cells[1], where), parse_double(cells[2], where),
                    parse_double(cells[3], where)});
  }
  if (wl.empty()) throw DataError(path.string() + ": no response rows");
  for (std::size_t i = 1; i < wl.size(); ++i) {
    if (!(wl[i] > wl[i - 1])) {
      throw NonAscending(path.string() + ": wavelengths must be strictly ascending");
    }
  }
  ResponseCurve r;
  r.wavelengths_nm = wl;
  r.constrained_positive = constrained_positive;
  r.weights = Tensor(Shape{3, wl.size()});
  for (std::size_t l = 0; l < wl.size(); ++l) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (constrained_positive && rows[l][c] < 0) {
        throw ConstraintViolation(path.string() + ": negative weight in a positive-constrained response");
      }
      r.weights[c * wl.size() + l] = rows[l][c];
    }
  }
  return r;
}

void save_response_csv(const ResponseCurve& response, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.precision(std::numeric_limits<double>::max_digits10);
  os << "wavelength_nm,r,g,b\n";
  const std::size_t L = response.bands();
  for (std::size_t l = 0; l < L; ++l) {
    os << response.wavelengths_nm[l];
    for (std::size_t c = 0; c < 3; ++c) os << ',' << response.weights[c * L + l];
    os << '\n';
  }
}

ResponseCurve default_response(const std::vector<double>& wl) {
  struct Lobe {
    double centre, width, gain;
  };
  // Main lobe plus a weak secondary lobe per channel, loosely after a
  // consumer colour sensor.
  const std::array<std::array<Lobe, 2>, 3> lobes{{
      {{{600.0, 35.0, 1.0}, {450.0, 25.0, 0.08}}},
      {{{540.0, 40.0, 1.0}, {620.0, 30.0, 0.10}}},
      {{{460.0, 30.0, 1.0}, {520.0, 30.0, 0.15}}},
  }};
  const std::size_t L = wl.size();
  const auto q = quadrature_weights(wl);
  ResponseCurve r;
  r.wavelengths_nm = wl;
  r.constrained_positive = true;
  r.weights = Tensor(Shape{3, L});
  for (std::size_t c = 0; c < 3; ++c) {
    double area = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      double v = 0.0;
      for (const Lobe& lb : lobes[c]) {
        const double t = (wl[l] - lb.centre) / lb.width;
        v += lb.gain * std::exp(-0.5 * t * t);
      }
      r.weights[c * L + l] = v;
      area += v * q[l];
    }
    for (std::size_t l = 0; l < L; ++l) r.weights[c * L + l] /= area;
  }
  return r;
}

SpectralCube synth_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                         std::size_t bands, double smoothness, double min_nm, double max_nm) {
  if (height == 0 || width == 0 || bands == 0) {
    throw std::invalid_argument("synth_scene: dimensions must be positive");
  }
  if (!(smoothness >= 0)) throw std::invalid_argument("synth_scene: smoothness must be >= 0");
  constexpr std::size_t kEndmembers = 4;
  constexpr std::size_t kRegions = 6;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Smoothing kernel along the band axis; its deviation gain is undone so the
  // endmember variance does not shrink with smoothness.
  std::vector<double> kernel{1.0};
  if (smoothness > 0) {
    const auto radius = static_cast<long>(std::ceil(3.0 * smoothness));
    kernel.assign(static_cast<std::size_t>(2 * radius + 1), 0.0);
    double s = 0.0;
    for (long i = -radius; i <= radius; ++i) {
      const double v = std::exp(-0.5 * (static_cast<double>(i) / smoothness) *
                                (static_cast<double>(i) / smoothness));
      kernel[static_cast<std::size_t>(i + radius)] = v;
      s += v;
    }
    for (double& v : kernel) v /= s;
  }
  double kernel_energy = 0.0;
  for (double v : kernel) kernel_energy += v * v;
  const double gain = 1.0 / std::sqrt(kernel_energy);
  const long radius = static_cast<long>(kernel.size() / 2);

  std::array<std::vector<double>, kEndmembers> endmembers;
  for (auto& e : endmembers) {
    std::vector<double> raw(bands);
    for (double& v : raw) v = unit(rng);
    e.resize(bands);
    for (std::size_t l = 0; l < bands; ++l) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        // reflect at the ends of the band axis
        long idx = static_cast<long>(l) + k;
        const long last = static_cast<long>(bands) - 1;
        while (idx < 0 || idx > last) {
          if (last == 0) {
            idx = 0;
            break;
          }
          idx = idx < 0 ? -idx : 2 * last - idx;
        }
        acc += kernel[static_cast<std::size_t>(k + radius)] * raw[static_cast<std::size_t>(idx)];
      }
      e[l] = std::clamp(0.5 + (acc - 0.5) * gain, 0.0, 1.0);
    }
  }

  std::array<std::array<double, 2>, kRegions> sites{};
  std::array<std::array<double, kEndmembers>, kRegions> mix{};
  for (std::size_t r = 0; r < kRegions; ++r) {
    sites[r] = {unit(rng) * static_cast<double>(height), unit(rng) * static_cast<double>(width)};
    double s = 0.0;
    for (double& a : mix[r]) {
      a = unit(rng) + 1e-3;
      s += a;
    }
    for (double& a : mix[r]) a /= s;
  }

  SpectralCube c;
  c.bands = bands;
  c.height = height;
  c.width = width;
  c.wavelengths_nm = uniform_wavelengths(bands, min_nm, max_nm);
  std::vector<double> vals(bands * height * width);
  double vmax = 0.0;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t r = 0; r < kRegions; ++r) {
        const double dy = static_cast<double>(y) + 0.5 - sites[r][0];
        const double dx = static_cast<double>(x) + 0.5 - sites[r][1];
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = r;
        }
      }
      for (std::size_t l = 0; l < bands; ++l) {
        double v = 0.0;
        for (std::size_t j = 0; j < kEndmembers; ++j) v += mix[best][j] * endmembers[j][l];
        vals[(l * height + y) * width + x] = v;
        vmax = std::max(vmax, v);
      }
    }
  }
  c.values.resize(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    c.values[i] = static_cast<float>(vmax > 0 ? vals[i] / vmax : 0.0);
  }
  return c;
}

std::vector<SpectralCube> crop_patches(const SpectralCube& cube, std::size_t size, std::size_t stride) {
  if (size == 0 || stride == 0) throw std::invalid_argument("crop_patches: size and stride must be positive");
  if (size > cube.height || size > cube.width) {
    throw std::invalid_argument("crop_patches: patch size " + std::to_string(size) +
                                " exceeds cube " + std::to_string(cube.height) + "x" +
                                std::to_string(cube.width));
  }
  const std::size_t ny = (cube.height - size) / stride + 1;
  const std::size_t nx = (cube.width - size) / stride + 1;
  std::vector<SpectralCube> out;
  out.reserve(ny * nx);
  for (std::size_t py = 0; py < ny; ++py) {
    for (std::size_t px = 0; px < nx; ++px) {
      SpectralCube p;
      p.bands = cube.bands;
      p.height = size;
      p.width = size;
      p.wavelengths_nm = cube.wavelengths_nm;
      p.values.resize(cube.bands * size * size);
      for (std::size_t l = 0; l < cube.bands; ++l) {
        for (std::size_t y = 0; y < size; ++y) {
          for (std::size_t x = 0; x < size; ++x) {
            p.at(l, y, x) = cube.at(l, py * stride + y, px * stride + x);
          }
        }
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

Tensor add_gaussian_noise(const Tensor& image, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0)) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
  Tensor out = image;
  if (sigma == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (double& v : out.data()) v += noise(rng);
  return out;
}

}  // namespace uem
