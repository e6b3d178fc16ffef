#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "uemkit/tensor.hpp"

namespace uem {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IoError : public DataError {
 public:
  using DataError::DataError;
};
class BadMagic : public DataError {
 public:
  using DataError::DataError;
};
class TruncatedFile : public DataError {
 public:
  using DataError::DataError;
};
class VersionMismatch : public DataError {
 public:
  using DataError::DataError;
};
class InvalidHeader : public DataError {
 public:
  using DataError::DataError;
};
class NonAscending : public DataError {
 public:
  using DataError::DataError;
};
class ColumnCount : public DataError {
 public:
  using DataError::DataError;
};
class ConstraintViolation : public DataError {
 public:
  using DataError::DataError;
};

inline constexpr double kDefaultMinWavelengthNm = 420.0;
inline constexpr double kDefaultMaxWavelengthNm = 700.0;

/// Evenly spaced band centres; a single band sits at `min_nm`.
std::vector<double> uniform_wavelengths(std::size_t bands, double min_nm = kDefaultMinWavelengthNm,
                                        double max_nm = kDefaultMaxWavelengthNm);

/// Quadrature weights for integrating over the band grid: the spacing for
/// uniform grids, trapezoidal weights otherwise, and 1 for a single band.
std::vector<double> quadrature_weights(const std::vector<double>& wavelengths_nm);

/// Radiance cube with values in [0,1], stored planar as [band][row][col] in
/// 32-bit floats, which is also the on-disk layout.
struct SpectralCube {
  std::size_t bands = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> wavelengths_nm;
  std::vector<float> values;

  float at(std::size_t l, std::size_t y, std::size_t x) const {
    return values[(l * height + y) * width + x];
  }
  float& at(std::size_t l, std::size_t y, std::size_t x) {
    return values[(l * height + y) * width + x];
  }

  /// {L,H,W} tensor of the same values.
  Tensor to_tensor() const;
  /// Throws DataError if a structural invariant is broken or a value leaves [0,1].
  void validate() const;
};

/// Wrap a {L,H,W} tensor as a cube; values are rounded to float.
SpectralCube cube_from_tensor(const Tensor& t, std::vector<double> wavelengths_nm);

/// .scube: "SCUB", version byte 0x01, u32 L, H, W (little-endian), then
/// L*H*W little-endian float32 values in [band][row][col] order.
void save_scube(const SpectralCube& cube, const std::filesystem::path& path);
/// Loaded cubes carry a uniform 420-700 nm band grid; the format stores none.
SpectralCube load_scube(const std::filesystem::path& path);

/// Filter-plus-sensor spectral response, weights {3,L} for channels r,g,b.
struct ResponseCurve {
  std::vector<double> wavelengths_nm;
  Tensor weights;
  bool constrained_positive = false;

  std::size_t bands() const { return wavelengths_nm.size(); }
};

/// CSV with header `wavelength_nm,r,g,b` and one row per band.
ResponseCurve load_response_csv(const std::filesystem::path& path,
                                 bool constrained_positive = false);
void save_response_csv(const ResponseCurve& response, const std::filesystem::path& path);

/// Built-in colour-camera-like response: Gaussian r/g/b lobes centred near
/// 600/540/460 nm, each channel normalised to unit integral over the grid.
ResponseCurve default_response(const std::vector<double>& wavelengths_nm);

/// Synthetic scene: convex mixtures of smooth random endmember spectra over a
/// Voronoi partition, normalised by the global maximum. `smoothness` is the
/// Gaussian smoothing width along the band axis in band units.
SpectralCube synth_scene(std::uint64_t seed, std::size_t height, std::size_t width,
                         std::size_t bands, double smoothness,
                         double min_nm = kDefaultMinWavelengthNm,
                         double max_nm = kDefaultMaxWavelengthNm);

/// Top-left-aligned grid of size x size patches.
std::vector<SpectralCube> crop_patches(const SpectralCube& cube, std::size_t size,
                                       std::size_t stride);

/// Additive white Gaussian noise, deterministic per seed. sigma == 0 is the identity.
Tensor add_gaussian_noise(const Tensor& image, double sigma, std::uint64_t seed);

}  // namespace uem
