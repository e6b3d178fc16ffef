#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "uemkit/autodiff.hpp"
#include "uemkit/params.hpp"
#include "uemkit/spectral_data.hpp"
#include "uemkit/tensor.hpp"

namespace uem::optics {

enum class EncoderVariant { AemP, AemI, PemP, PemI, WemP, WemI, WemIPc, UemI };

/// Accepts the CLI spellings ("aem-p", "wem-i-pc", ...), case-insensitive,
/// with "wem" as an alias for "wem-p".
EncoderVariant parse_encoder_variant(std::string_view name);
std::string to_string(EncoderVariant v);
const std::vector<EncoderVariant>& all_encoder_variants();

inline constexpr const char* kMaskLogits = "encoder.mask_logits";
inline constexpr const char* kMask = "encoder.mask";
inline constexpr const char* kHeights = "encoder.heights";
inline constexpr const char* kPsf = "encoder.psf";
inline constexpr const char* kResponse = "encoder.response";

/// Names of the encoder parameters a cast optimises.
std::vector<std::string> trainable_encoder_params(EncoderVariant v);

/// WEM-I, WEM-I-PC and UEM-I learn per-band weights V = W * dlambda rather
/// than the density W, so the optimiser sees the same scale on any grid.
/// Fixed casts store W directly.
bool learns_response(EncoderVariant v);
/// W from learned per-band weights.
Tensor response_from_band_weights(const Tensor& band_weights, const std::vector<double>& wavelengths_nm);

/// Simulation geometry for the diffractive (PEM-P) encoder. Lengths are in the
/// units named by each field. Grid points sit at (j - (N-1)/2) * pitch so that
/// the sampled geometry is symmetric under the square's rotations.
struct OpticalSetup {
  std::size_t grid_n = 256;
  double pitch_um = 4.0;
  double aperture_diameter_mm = 1.0;
  double delta_n = 0.5;
  double scene_distance_mm = 1000.0;
  double propagation_z_mm = 50.0;
  double h_max_um = 1.2;
  std::size_t radial_samples = 32;
  /// Side of the image-grid PSF (odd).
  std::size_t psf_window = 9;
  /// Simulation samples per sensor pixel along each axis.
  std::size_t downsample = 4;

  void validate() const;
};

// ----------------------------------------------------------- graph builders

/// Rotationally symmetric height map {N,N} from a radial profile {R}. Profile
/// sample i sits at radius i * a / (R-1), a = aperture radius; radii beyond the
/// last sample take its value.
ad::Var radial_to_2d(const ad::Var& profile, const OpticalSetup& setup);

/// Wavefields of the Fresnel propagation for every band, kept for inspection.
struct FresnelFields {
  ad::Var u_doe;      // {L,N,N,2}
  ad::Var u_sensor;   // {L,N,N,2}
  ad::Var intensity;  // {L,N,N}
};

FresnelFields propagate(const ad::Var& height_map, const OpticalSetup& setup,
                        const std::vector<double>& wavelengths_nm);

/// Same sensor intensity as propagate(...).intensity, recorded as one node
/// with a hand-written adjoint. Used on the training path.
ad::Var propagate_intensity(const ad::Var& height_map, const OpticalSetup& setup,
                            const std::vector<double>& wavelengths_nm);

/// Central window, area downsampling and per-band unit-sum normalisation of
/// the sensor intensity: {L,N,N} -> {L,w,w}.
ad::Var intensity_to_psf(const ad::Var& intensity, const OpticalSetup& setup);

ad::Var height_to_psf(const ad::Var& height_map, const OpticalSetup& setup,
                      const std::vector<double>& wavelengths_nm);

/// Forward 1 where logit >= 0 (sigmoid >= 0.5), else 0; backward passes the
/// sigmoid derivative through unchanged.
ad::Var binarize_mask(const ad::Var& logits);

/// Band l moves l rows up; vacated rows are zero and rows pushed past the top
/// are lost.
ad::Var dispersive_shear(const ad::Var& cube);
ad::Var dispersive_unshear(const ad::Var& cube);

ad::Var integrate_response(const ad::Var& cube, const ad::Var& response,
                           std::span<const double> quad);

/// The unified measurement operator: amplitude code, then per-band PSF
/// convolution, then response integration. Invalid mask/psf Vars are unit terms.
struct EncodingOperator {
  ad::Var mask;  // {L,H,W}
  bool shear = false;
  ad::Var psf;   // {L,k,k}
  ad::Var response;  // {3,L}
  std::vector<double> quad;

  ad::Var forward(const ad::Var& cube) const;
  /// Exact adjoint of forward for fixed operator parameters.
  ad::Var adjoint(const ad::Var& rgb) const;
};

/// Assemble the operator of a cast from bound parameters.
EncodingOperator build_operator(EncoderVariant variant, const BoundParams& params,
                                const OpticalSetup& setup,
                                const std::vector<double>& wavelengths_nm);

// ------------------------------------------------------- tensor convenience

Tensor radial_to_2d(const Tensor& profile, const OpticalSetup& setup);
Tensor height_to_psf(const Tensor& height_map, const OpticalSetup& setup,
                     const std::vector<double>& wavelengths_nm);
Tensor binarize_mask(const Tensor& logits);
Tensor dispersive_shear(const Tensor& cube);
Tensor integrate_response(const Tensor& cube, const ResponseCurve& response);

Tensor encode_wem(const Tensor& cube, const ResponseCurve& response);
/// physical: `mask` holds {H,W} logits, binarised and sheared; ideal: {L,H,W}.
Tensor encode_aem(const Tensor& cube, const Tensor& mask, bool physical,
                  const ResponseCurve& response);
Tensor encode_pem(const Tensor& cube, const Tensor& psf, const ResponseCurve& response);
/// Empty mask or psf tensors are unit terms.
Tensor encode_uem(const Tensor& cube, const Tensor& mask, const Tensor& psf,
                  const ResponseCurve& response);

/// Applies a cast with the given parameters (no gradient recording).
Tensor encode(EncoderVariant variant, const Tensor& cube, const ParameterSet& params,
              const OpticalSetup& setup, const std::vector<double>& wavelengths_nm);

// ------------------------------------------------------------ initialisation

struct EncoderInit {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> wavelengths_nm;
  OpticalSetup optics;
  /// Learnable PSF side for PEM-I / UEM-I.
  std::size_t psf_size = 9;
  /// Response used by casts that do not learn one; defaults to default_response.
  std::optional<ResponseCurve> fixed_response;
  /// UEM-I only: start from mask = 1 and a delta PSF, otherwise all-0.5 mask
  /// and Gaussian PSF.
  bool unit_init = true;
};

/// AEM-I: all 0.5. PEM-I: N(0, 1/k^2). WEM-I: per-band weights U(-s, s), s = 1/sqrt(L); the
/// positive-constrained variant takes magnitudes. AEM-P logits: U(-0.1, 0.1).
/// PEM-P heights: U(0, h_max). Each group draws from its own seeded stream.
ParameterSet init_encoder(EncoderVariant variant, std::uint64_t seed, const EncoderInit& init);

/// {L,k,k} stack of centred unit impulses.
Tensor delta_psf(std::size_t bands, std::size_t k);

}  // namespace uem::optics
