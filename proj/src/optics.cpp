#include "uemkit/optics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <numbers>
#include <random>
#include <stdexcept>

#include "uemkit/fft.hpp"

namespace uem::optics {

namespace {

struct VariantName {
  EncoderVariant v;
  const char* name;
};

constexpr VariantName kNames[] = {
    {EncoderVariant::AemP, "aem-p"}, {EncoderVariant::AemI, "aem-i"},
    {EncoderVariant::PemP, "pem-p"}, {EncoderVariant::PemI, "pem-i"},
    {EncoderVariant::WemP, "wem-p"}, {EncoderVariant::WemI, "wem-i"},
    {EncoderVariant::WemIPc, "wem-i-pc"}, {EncoderVariant::UemI, "uem-i"},
};

ad::Tape& tape_of(const ad::Var& v) {
  if (!v.valid()) throw std::invalid_argument("optics: use of an unbound Var");
  return *v.tape();
}

double grid_coord(std::size_t j, const OpticalSetup& s) {
  return (static_cast<double>(j) - (static_cast<double>(s.grid_n) - 1.0) / 2.0) * s.pitch_um;
}

double aperture_radius_um(const OpticalSetup& s) { return s.aperture_diameter_mm * 500.0; }

void require_bands(const Tensor& cube, const ResponseCurve& response, const char* op) {
  if (cube.rank() != 3) {
    throw ShapeError(std::string(op) + ": expected a [L,H,W] cube, got " + shape_str(cube.shape()));
  }
  if (response.weights.shape() != Shape{3, cube.dim(0)} || response.bands() != cube.dim(0)) {
    throw ShapeError(std::string(op) + ": response " + shape_str(response.weights.shape()) +
                     " does not match cube " + shape_str(cube.shape()));
  }
}

struct PropagationConstants {
  Tensor base_phase;        // point-source phase, {L,N,N}
  Tensor aperture;          // {L,N,N,2}
  Tensor transfer;          // Fresnel transfer function, {L,N,N,2}
  Tensor phase_per_height;  // 2 pi dn / lambda, {L}
};

using ConstantsKey = std::pair<std::vector<double>, std::vector<double>>;

ConstantsKey constants_key(const OpticalSetup& s, const std::vector<double>& wl) {
  return {{static_cast<double>(s.grid_n), s.pitch_um, s.aperture_diameter_mm, s.delta_n,
           s.scene_distance_mm, s.propagation_z_mm},
          wl};
}

std::shared_ptr<const PropagationConstants> build_constants(const OpticalSetup& setup,
                                                           const std::vector<double>& wavelengths_nm) {
  const std::size_t n = setup.grid_n;
  const std::size_t bands = wavelengths_nm.size();
  const std::size_t plane = n * n;
  const double two_pi = 2.0 * std::numbers::pi;
  const double d_um = setup.scene_distance_mm * 1000.0;
  const double z_um = setup.propagation_z_mm * 1000.0;
  const double radius = aperture_radius_um(setup);

  auto k = std::make_shared<PropagationConstants>();
  k->base_phase = Tensor(Shape{bands, n, n});
  k->aperture = Tensor(Shape{bands, n, n, 2});
  k->transfer = Tensor(Shape{bands, n, n, 2});
  k->phase_per_height = Tensor(Shape{bands});
  for (std::size_t l = 0; l < bands; ++l) {
    const double lam = wavelengths_nm[l] / 1000.0;
    k->phase_per_height[l] = two_pi * setup.delta_n / lam;
    const double carrier = two_pi * z_um / lam;
    for (std::size_t y = 0; y < n; ++y) {
      const double gy = grid_coord(y, setup);
      const long ky = y < n / 2 ? static_cast<long>(y) : static_cast<long>(y) - static_cast<long>(n);
      const double fy = static_cast<double>(ky) / (static_cast<double>(n) * setup.pitch_um);
      for (std::size_t x = 0; x < n; ++x) {
        const double gx = grid_coord(x, setup);
        const long kx = x < n / 2 ? static_cast<long>(x) : static_cast<long>(x) - static_cast<long>(n);
        const double fx = static_cast<double>(kx) / (static_cast<double>(n) * setup.pitch_um);
        const std::size_t i = l * plane + y * n + x;
        const double r2 = gx * gx + gy * gy;
        k->base_phase[i] = two_pi / lam * r2 / d_um;
        k->aperture[2 * i] = std::sqrt(r2) <= radius ? 1.0 : 0.0;
        const double t = carrier - std::numbers::pi * lam * z_um * (fx * fx + fy * fy);
        k->transfer[2 * i] = std::cos(t);
        k->transfer[2 * i + 1] = std::sin(t);
      }
    }
  }
  return k;
}

// The fields depend only on the geometry, so the last few are kept.
std::shared_ptr<const PropagationConstants> propagation_constants(const OpticalSetup& setup,
                                                                 const std::vector<double>& wl) {
  static std::mutex mu;
  static std::vector<std::pair<ConstantsKey, std::shared_ptr<const PropagationConstants>>> cache;
  ConstantsKey key = constants_key(setup, wl);
  {
    std::lock_guard lock(mu);
    for (const auto& [k, v] : cache) {
      if (k == key) return v;
    }
  }
  auto built = build_constants(setup, wl);
  std::lock_guard lock(mu);
  if (cache.size() >= 4) cache.erase(cache.begin());
  cache.emplace_back(std::move(key), built);
  return built;
}

}  // namespace

EncoderVariant parse_encoder_variant(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::replace(s.begin(), s.end(), '_', '-');
  if (s == "wem") return EncoderVariant::WemP;
  for (const auto& [v, n] : kNames) {
    if (s == n) return v;
  }
  throw std::invalid_argument("unknown encoder variant '" + std::string(name) + "'");
}

std::string to_string(EncoderVariant v) {
  for (const auto& [vv, n] : kNames) {
    if (vv == v) return n;
  }
  throw std::invalid_argument("bad encoder variant");
}

const std::vector<EncoderVariant>& all_encoder_variants() {
  static const std::vector<EncoderVariant> all = [] {
    std::vector<EncoderVariant> out;
    for (const auto& [v, n] : kNames) out.push_back(v);
    return out;
  }();
  return all;
}

std::vector<std::string> trainable_encoder_params(EncoderVariant v) {
  switch (v) {
    case EncoderVariant::AemP: return {kMaskLogits};
    case EncoderVariant::AemI: return {kMask};
    case EncoderVariant::PemP: return {kHeights};
    case EncoderVariant::PemI: return {kPsf};
    case EncoderVariant::WemP: return {};
    case EncoderVariant::WemI:
    case EncoderVariant::WemIPc: return {kResponse};
    case EncoderVariant::UemI: return {kMask, kPsf, kResponse};
  }
  return {};
}

bool learns_response(EncoderVariant v) {
  return v == EncoderVariant::WemI || v == EncoderVariant::WemIPc || v == EncoderVariant::UemI;
}

Tensor response_from_band_weights(const Tensor& band_weights, const std::vector<double>& wavelengths_nm) {
  const auto quad = quadrature_weights(wavelengths_nm);
  if (band_weights.shape() != Shape{3, quad.size()}) {
    throw ShapeError("response_from_band_weights: " + shape_str(band_weights.shape()) + " for " +
                     std::to_string(quad.size()) + " bands");
  }
  Tensor out = band_weights;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t l = 0; l < quad.size(); ++l) out[c * quad.size() + l] /= quad[l];
  return out;
}

void OpticalSetup::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("optical setup: " + m); };
  if (!is_power_of_two(grid_n)) fail("grid_n must be a power of two, got " + std::to_string(grid_n));
  if (!(pitch_um > 0) || !(aperture_diameter_mm > 0) || !(scene_distance_mm > 0) ||
      !(h_max_um > 0)) {
    fail("lengths must be positive");
  }
  if (!(propagation_z_mm > 0)) fail("propagation distance z must be positive");
  if (!(delta_n > 0)) fail("delta_n must be positive");
  if (radial_samples < 2) fail("need at least 2 radial samples");
  if (psf_window % 2 == 0) fail("psf_window must be odd");
  if (downsample == 0) fail("downsample must be positive");
  const std::size_t span = psf_window * downsample;
  if (span > grid_n) fail("psf_window * downsample exceeds grid_n");
  if ((grid_n - span) % 2 != 0) {
    fail("grid_n - psf_window * downsample must be even so the window stays centred");
  }
}

// ------------------------------------------------------------ height map

ad::Var radial_to_2d(const ad::Var& profile, const OpticalSetup& setup) {
  setup.validate();
  if (profile.shape() != Shape{setup.radial_samples}) {
    throw ShapeError("radial_to_2d: profile " + shape_str(profile.shape()) + " but setup expects " +
                     std::to_string(setup.radial_samples) + " samples");
  }
  const std::size_t n = setup.grid_n;
  const std::size_t r_count = setup.radial_samples;
  const double step = aperture_radius_um(setup) / static_cast<double>(r_count - 1);
  std::vector<std::uint32_t> lo(n * n);
  std::vector<double> frac(n * n);
  for (std::size_t y = 0; y < n; ++y) {
    const double gy = grid_coord(y, setup);
    for (std::size_t x = 0; x < n; ++x) {
      const double gx = grid_coord(x, setup);
      const double t = std::sqrt(gx * gx + gy * gy) / step;
      const std::size_t i = y * n + x;
      if (t >= static_cast<double>(r_count - 1)) {
        lo[i] = static_cast<std::uint32_t>(r_count - 2);
        frac[i] = 1.0;
      } else {
        const double f = std::floor(t);
        lo[i] = static_cast<std::uint32_t>(f);
        frac[i] = t - f;
      }
    }
  }
  const Tensor& p = profile.value();
  Tensor out(Shape{n, n});
  for (std::size_t i = 0; i < n * n; ++i) {
    out[i] = (1.0 - frac[i]) * p[lo[i]] + frac[i] * p[lo[i] + 1];
  }
  return tape_of(profile).record(
      "radial_to_2d", std::move(out), {profile},
      [lo = std::move(lo), frac = std::move(frac)](const Tensor& g, std::span<Tensor* const> gi) {
        Tensor& gp = *gi[0];
        for (std::size_t i = 0; i < lo.size(); ++i) {
          gp[lo[i]] += (1.0 - frac[i]) * g[i];
          gp[lo[i] + 1] += frac[i] * g[i];
        }
      });
}

// -------------------------------------------------------- Fresnel model

FresnelFields propagate(const ad::Var& height_map, const OpticalSetup& setup,
                        const std::vector<double>& wavelengths_nm) {
  setup.validate();
  const std::size_t n = setup.grid_n;
  if (height_map.shape() != Shape{n, n}) {
    throw ShapeError("propagate: height map " + shape_str(height_map.shape()) + " for grid " +
                     std::to_string(n));
  }
  if (wavelengths_nm.empty()) throw std::invalid_argument("propagate: no wavelengths");
  for (double wl : wavelengths_nm) {
    if (!(wl > 0)) throw std::invalid_argument("propagate: wavelengths must be positive");
  }
  ad::Tape& tape = tape_of(height_map);
  const std::size_t bands = wavelengths_nm.size();
  std::shared_ptr<const PropagationConstants> k = propagation_constants(setup, wavelengths_nm);

  ad::Var h = ad::broadcast_channels(height_map, bands);
  ad::Var phi = ad::scale_channels(h, tape.constant(k->phase_per_height));
  ad::Var total = ad::add(phi, tape.constant(k->base_phase));
  ad::Var u_doe = ad::complex_mul(ad::complex_exp(total), tape.constant(k->aperture));
  ad::Var spectrum = ad::complex_mul(ad::fft2(u_doe), tape.constant(k->transfer));
  ad::Var u_sensor = ad::ifft2(spectrum);
  return {u_doe, u_sensor, ad::complex_abs2(u_sensor)};
}

ad::Var propagate_intensity(const ad::Var& height_map, const OpticalSetup& setup,
                            const std::vector<double>& wavelengths_nm) {
  setup.validate();
  const std::size_t n = setup.grid_n;
  if (height_map.shape() != Shape{n, n}) {
    throw ShapeError("propagate_intensity: height map " + shape_str(height_map.shape()) +
                     " for grid " + std::to_string(n));
  }
  if (wavelengths_nm.empty()) throw std::invalid_argument("propagate_intensity: no wavelengths");
  for (double wl : wavelengths_nm) {
    if (!(wl > 0)) throw std::invalid_argument("propagate_intensity: wavelengths must be positive");
  }
  const std::size_t bands = wavelengths_nm.size();
  const std::size_t plane = n * n;
  std::shared_ptr<const PropagationConstants> k = propagation_constants(setup, wavelengths_nm);
  const Tensor& hv = height_map.value();

  // e = exp(i theta) before the aperture; u = field at the sensor.
  Tensor e(Shape{bands, n, n, 2});
  Tensor u(Shape{bands, n, n, 2});
  for (std::size_t l = 0; l < bands; ++l) {
    const double c = k->phase_per_height[l];
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = l * plane + p;
      const double theta = c * hv[p] + k->base_phase[i];
      const double er = std::cos(theta), ei = std::sin(theta);
      e[2 * i] = er;
      e[2 * i + 1] = ei;
      const double ar = k->aperture[2 * i], ai = k->aperture[2 * i + 1];
      u[2 * i] = er * ar - ei * ai;
      u[2 * i + 1] = er * ai + ei * ar;
    }
  }
  fft2_unitary(u.data(), n, false);
  for (std::size_t i = 0; i < bands * plane; ++i) {
    const double ur = u[2 * i], ui = u[2 * i + 1];
    const double tr = k->transfer[2 * i], ti = k->transfer[2 * i + 1];
    u[2 * i] = ur * tr - ui * ti;
    u[2 * i + 1] = ur * ti + ui * tr;
  }
  fft2_unitary(u.data(), n, true);
  Tensor intensity(Shape{bands, n, n});
  for (std::size_t i = 0; i < bands * plane; ++i) {
    intensity[i] = u[2 * i] * u[2 * i] + u[2 * i + 1] * u[2 * i + 1];
  }
  if (!height_map.requires_grad()) {
    return tape_of(height_map).record("propagate_intensity", std::move(intensity), {height_map}, nullptr);
  }
  return tape_of(height_map).record(
      "propagate_intensity", std::move(intensity), {height_map},
      [k, n, bands, plane, e = std::move(e), u = std::move(u)](const Tensor& g,
                                                               std::span<Tensor* const> gi) {
        Tensor w(Shape{bands, n, n, 2});
        for (std::size_t i = 0; i < bands * plane; ++i) {
          w[2 * i] = 2.0 * g[i] * u[2 * i];
          w[2 * i + 1] = 2.0 * g[i] * u[2 * i + 1];
        }
        fft2_unitary(w.data(), n, false);
        for (std::size_t i = 0; i < bands * plane; ++i) {
          const double wr = w[2 * i], wi = w[2 * i + 1];
          const double tr = k->transfer[2 * i], ti = k->transfer[2 * i + 1];
          w[2 * i] = wr * tr + wi * ti;
          w[2 * i + 1] = wi * tr - wr * ti;
        }
        fft2_unitary(w.data(), n, true);
        Tensor& gh = *gi[0];
        for (std::size_t l = 0; l < bands; ++l) {
          const double c = k->phase_per_height[l];
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = l * plane + p;
            const double ar = k->aperture[2 * i], ai = k->aperture[2 * i + 1];
            const double zr = w[2 * i] * ar + w[2 * i + 1] * ai;
            const double zi = w[2 * i + 1] * ar - w[2 * i] * ai;
            gh[p] += c * (e[2 * i] * zi - e[2 * i + 1] * zr);
          }
        }
      });
}

ad::Var intensity_to_psf(const ad::Var& intensity, const OpticalSetup& setup) {
  setup.validate();
  const std::size_t n = setup.grid_n;
  if (intensity.shape().size() != 3 || intensity.shape()[1] != n || intensity.shape()[2] != n) {
    throw ShapeError("intensity_to_psf: intensity " + shape_str(intensity.shape()) + " for grid " +
                     std::to_string(n));
  }
  const std::size_t span = setup.psf_window * setup.downsample;
  const std::size_t off = (n - span) / 2;
  ad::Var window = ad::crop2d(intensity, off, off, span, span);
  ad::Var pooled = ad::avg_pool2d(window, setup.downsample);
  return ad::scale_channels(pooled, ad::reciprocal(ad::channel_sums(pooled)));
}

ad::Var height_to_psf(const ad::Var& height_map, const OpticalSetup& setup,
                      const std::vector<double>& wavelengths_nm) {
  return intensity_to_psf(propagate_intensity(height_map, setup, wavelengths_nm), setup);
}

// ------------------------------------------------------- amplitude codes

ad::Var binarize_mask(const ad::Var& logits) {
  const Tensor& lv = logits.value();
  Tensor out(lv.shape());
  for (std::size_t i = 0; i < lv.size(); ++i) out[i] = lv[i] >= 0.0 ? 1.0 : 0.0;
  return tape_of(logits).record(
      "binarize_mask", std::move(out), {logits},
      [logits](const Tensor& g, std::span<Tensor* const> gi) {
        const Tensor& lv = logits.value();
        for (std::size_t i = 0; i < lv.size(); ++i) {
          const double s = lv[i] >= 0 ? 1.0 / (1.0 + std::exp(-lv[i]))
                                      : std::exp(lv[i]) / (1.0 + std::exp(lv[i]));
          (*gi[0])[i] += g[i] * s * (1.0 - s);
        }
      });
}

namespace {

ad::Var shear_by(const ad::Var& cube, int sign) {
  if (cube.shape().size() != 3) {
    throw ShapeError("dispersive_shear: expected [L,H,W], got " + shape_str(cube.shape()));
  }
  const std::size_t bands = cube.shape()[0];
  std::vector<int> dy(bands), dx(bands, 0);
  for (std::size_t l = 0; l < bands; ++l) dy[l] = sign * static_cast<int>(l);
  return ad::shift2d(cube, std::move(dy), std::move(dx));
}

}  // namespace

ad::Var dispersive_shear(const ad::Var& cube) { return shear_by(cube, -1); }
ad::Var dispersive_unshear(const ad::Var& cube) { return shear_by(cube, +1); }

ad::Var integrate_response(const ad::Var& cube, const ad::Var& response,
                           std::span<const double> quad) {
  return ad::weighted_sum_over_lambda(cube, response, quad);
}

// ------------------------------------------------------------ operator

ad::Var EncodingOperator::forward(const ad::Var& cube) const {
  ad::Var x = cube;
  if (mask.valid()) x = ad::mul(mask, x);
  if (shear) x = dispersive_shear(x);
  if (psf.valid()) x = ad::depthwise_conv2d(x, psf);
  return integrate_response(x, response, quad);
}

ad::Var EncodingOperator::adjoint(const ad::Var& rgb) const {
  ad::Tape& tape = tape_of(rgb);
  ad::Var x = ad::channel_mix(ad::transpose(response), rgb);
  x = ad::scale_channels(x, tape.constant(Tensor(Shape{quad.size()}, quad)));
  if (psf.valid()) x = ad::depthwise_conv2d(x, ad::flip2d(psf));
  if (shear) x = dispersive_unshear(x);
  if (mask.valid()) x = ad::mul(mask, x);
  return x;
}

EncodingOperator build_operator(EncoderVariant variant, const BoundParams& params,
                                const OpticalSetup& setup,
                                const std::vector<double>& wavelengths_nm) {
  EncodingOperator op;
  op.quad = quadrature_weights(wavelengths_nm);
  const std::size_t bands = wavelengths_nm.size();
  op.response = params[kResponse];
  if (learns_response(variant)) {
    Tensor inv(Shape{3, bands});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t l = 0; l < bands; ++l) inv[c * bands + l] = 1.0 / op.quad[l];
    op.response = ad::mul(op.response, tape_of(op.response).constant(inv));
  }
  switch (variant) {
    case EncoderVariant::AemP:
      op.mask = ad::broadcast_channels(binarize_mask(params[kMaskLogits]), bands);
      op.shear = true;
      break;
    case EncoderVariant::AemI:
      op.mask = params[kMask];
      break;
    case EncoderVariant::PemP:
      op.psf = height_to_psf(radial_to_2d(params[kHeights], setup), setup, wavelengths_nm);
      break;
    case EncoderVariant::PemI:
      op.psf = params[kPsf];
      break;
    case EncoderVariant::WemP:
    case EncoderVariant::WemI:
    case EncoderVariant::WemIPc:
      break;
    case EncoderVariant::UemI:
      op.mask = params[kMask];
      op.psf = params[kPsf];
      break;
  }
  return op;
}

// ------------------------------------------------------ tensor wrappers

Tensor radial_to_2d(const Tensor& profile, const OpticalSetup& setup) {
  ad::Tape tape;
  return radial_to_2d(tape.constant(profile), setup).value();
}

Tensor height_to_psf(const Tensor& height_map, const OpticalSetup& setup,
                     const std::vector<double>& wavelengths_nm) {
  ad::Tape tape;
  return height_to_psf(tape.constant(height_map), setup, wavelengths_nm).value();
}

Tensor binarize_mask(const Tensor& logits) {
  ad::Tape tape;
  return binarize_mask(tape.constant(logits)).value();
}

Tensor dispersive_shear(const Tensor& cube) {
  ad::Tape tape;
  return dispersive_shear(tape.constant(cube)).value();
}

Tensor integrate_response(const Tensor& cube, const ResponseCurve& response) {
  require_bands(cube, response, "integrate_response");
  ad::Tape tape;
  const auto quad = quadrature_weights(response.wavelengths_nm);
  return integrate_response(tape.constant(cube), tape.constant(response.weights), quad).value();
}

Tensor encode_wem(const Tensor& cube, const ResponseCurve& response) {
  return integrate_response(cube, response);
}

Tensor encode_aem(const Tensor& cube, const Tensor& mask, bool physical,
                  const ResponseCurve& response) {
  require_bands(cube, response, "encode_aem");
  ad::Tape tape;
  EncodingOperator op;
  op.quad = quadrature_weights(response.wavelengths_nm);
  op.response = tape.constant(response.weights);
  if (physical) {
    if (mask.shape() != Shape{cube.dim(1), cube.dim(2)}) {
      throw ShapeError("encode_aem: physical mask " + shape_str(mask.shape()) + " for cube " +
                       shape_str(cube.shape()));
    }
    op.mask = ad::broadcast_channels(binarize_mask(tape.constant(mask)), cube.dim(0));
    op.shear = true;
  } else {
    if (mask.shape() != cube.shape()) {
      throw ShapeError("encode_aem: ideal mask " + shape_str(mask.shape()) + " for cube " +
                       shape_str(cube.shape()));
    }
    op.mask = tape.constant(mask);
  }
  return op.forward(tape.constant(cube)).value();
}

Tensor encode_pem(const Tensor& cube, const Tensor& psf, const ResponseCurve& response) {
  require_bands(cube, response, "encode_pem");
  ad::Tape tape;
  EncodingOperator op;
  op.quad = quadrature_weights(response.wavelengths_nm);
  op.response = tape.constant(response.weights);
  op.psf = tape.constant(psf);
  return op.forward(tape.constant(cube)).value();
}

Tensor encode_uem(const Tensor& cube, const Tensor& mask, const Tensor& psf,
                  const ResponseCurve& response) {
  require_bands(cube, response, "encode_uem");
  ad::Tape tape;
  EncodingOperator op;
  op.quad = quadrature_weights(response.wavelengths_nm);
  op.response = tape.constant(response.weights);
  if (!mask.empty()) op.mask = tape.constant(mask);
  if (!psf.empty()) op.psf = tape.constant(psf);
  return op.forward(tape.constant(cube)).value();
}

Tensor encode(EncoderVariant variant, const Tensor& cube, const ParameterSet& params,
              const OpticalSetup& setup, const std::vector<double>& wavelengths_nm) {
  ad::Tape tape;
  BoundParams bound(tape, params, {});
  const EncodingOperator op = build_operator(variant, bound, setup, wavelengths_nm);
  return op.forward(tape.constant(cube)).value();
}

// ------------------------------------------------------- initialisation

Tensor delta_psf(std::size_t bands, std::size_t k) {
  if (k % 2 == 0) throw std::invalid_argument("delta_psf: kernel size must be odd");
  Tensor out(Shape{bands, k, k});
  for (std::size_t l = 0; l < bands; ++l) out.at(l, k / 2, k / 2) = 1.0;
  return out;
}

ParameterSet init_encoder(EncoderVariant variant, std::uint64_t seed, const EncoderInit& init) {
  const std::size_t bands = init.wavelengths_nm.size();
  const std::size_t h = init.height;
  const std::size_t w = init.width;
  const std::size_t k = init.psf_size;
  if (bands == 0 || h == 0 || w == 0) throw std::invalid_argument("init_encoder: empty geometry");
  if (k % 2 == 0) throw std::invalid_argument("init_encoder: psf_size must be odd");

  auto rng_for = [seed](const char* name) { return std::mt19937_64(stream_seed(seed, name)); };
  auto uniform = [&](const char* name, Shape shape, double lo, double hi) {
    auto rng = rng_for(name);
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    return t;
  };
  auto gaussian_psf = [&] {
    auto rng = rng_for(kPsf);
    std::normal_distribution<double> dist(0.0, 1.0 / static_cast<double>(k * k));
    Tensor t(Shape{bands, k, k});
    for (double& v : t.data()) v = dist(rng);
    return t;
  };
  const double s = 1.0 / std::sqrt(static_cast<double>(bands));
  auto free_response = [&](bool positive) {
    Tensor t = uniform(kResponse, Shape{3, bands}, -s, s);
    if (positive) {
      for (double& v : t.data()) v = std::abs(v);
    }
    return t;
  };
  auto fixed_response = [&] {
    if (init.fixed_response) {
      if (init.fixed_response->weights.shape() != Shape{3, bands}) {
        throw ShapeError("init_encoder: fixed response " +
                         shape_str(init.fixed_response->weights.shape()) + " for " +
                         std::to_string(bands) + " bands");
      }
      return init.fixed_response->weights;
    }
    return default_response(init.wavelengths_nm).weights;
  };

  ParameterSet p;
  switch (variant) {
    case EncoderVariant::AemP:
      p.set(kMaskLogits, uniform(kMaskLogits, Shape{h, w}, -0.1, 0.1));
      p.set(kResponse, fixed_response());
      break;
    case EncoderVariant::AemI:
      p.set(kMask, Tensor(Shape{bands, h, w}, 0.5));
      p.set(kResponse, fixed_response());
      break;
    case EncoderVariant::PemP:
      init.optics.validate();
      p.set(kHeights, uniform(kHeights, Shape{init.optics.radial_samples}, 0.0, init.optics.h_max_um));
      p.set(kResponse, fixed_response());
      break;
    case EncoderVariant::PemI:
      p.set(kPsf, gaussian_psf());
      p.set(kResponse, fixed_response());
      break;
    case EncoderVariant::WemP:
      p.set(kResponse, fixed_response());
      break;
    case EncoderVariant::WemI:
      p.set(kResponse, free_response(false));
      break;
    case EncoderVariant::WemIPc:
      p.set(kResponse, free_response(true));
      break;
    case EncoderVariant::UemI:
      p.set(kMask, Tensor(Shape{bands, h, w}, init.unit_init ? 1.0 : 0.5));
      p.set(kPsf, init.unit_init ? delta_psf(bands, k) : gaussian_psf());
      p.set(kResponse, free_response(false));
      break;
  }
  return p;
}

}  // namespace uem::optics
