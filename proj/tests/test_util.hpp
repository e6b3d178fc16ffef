#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "uemkit/autodiff.hpp"
#include "uemkit/spectral_data.hpp"
#include "uemkit/tensor.hpp"

namespace uem::testing {

inline Tensor uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

inline ResponseCurve random_response(std::size_t bands, std::uint64_t seed, bool positive = false) {
  ResponseCurve r;
  r.wavelengths_nm = uniform_wavelengths(bands);
  r.weights = uniform(Shape{3, bands}, seed, positive ? 0.0 : -1.0, 1.0);
  r.constrained_positive = positive;
  return r;
}

/// Scalar probe of a tensor-valued node: sum(out * R) with fixed random R.
inline ad::Var probe(const ad::Var& out, std::uint64_t seed = 99) {
  return ad::sum(ad::mul(out, out.tape()->constant(uniform(out.shape(), seed))));
}

inline Tensor lin(const Tensor& x, double a, const Tensor& y, double b) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("uemkit_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace uem::testing
