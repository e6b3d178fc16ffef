#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "uemkit/autodiff.hpp"
#include "uemkit/optics.hpp"
#include "uemkit/params.hpp"
#include "uemkit/spectral_data.hpp"
#include "uemkit/tensor.hpp"

namespace uem::decoders {

enum class DecoderVariant { SimConv, ResUNet, Unfolding };

DecoderVariant parse_decoder_variant(std::string_view name);
std::string to_string(DecoderVariant v);

struct DecoderConfig {
  DecoderVariant variant = DecoderVariant::SimConv;
  /// Spatial kernel size of the Sim-Conv-Net layers (odd).
  std::size_t kernel = 3;
  std::size_t hidden = 31;
  /// Levels of a standalone Res-U-Net.
  std::size_t depth = 7;
  /// Levels of the Res-U-Net inside each unfolding stage.
  std::size_t unfold_depth = 4;
  std::size_t base_width = 8;
  std::size_t max_width = 128;
  std::size_t unfold_iters = 4;
  double alpha_init = 0.01;
  double eta_init = 0.01;

  void validate() const;
};

/// All decoder parameter names start with this prefix.
inline constexpr const char* kPrefix = "decoder.";

// ---------------------------------------------------------- Sim-Conv-Net

/// decoder.conv{0..3}.{weight,bias}; widths in -> hidden -> hidden -> hidden -> bands.
/// He-normal weights, zero bias.
ParameterSet init_sim_conv(const DecoderConfig& cfg, std::size_t in_channels, std::size_t bands,
                           std::uint64_t seed);
ad::Var sim_conv_forward(const ad::Var& rgb, const BoundParams& params);
Tensor sim_conv_forward(const Tensor& rgb, const ParameterSet& params);

// ------------------------------------------------------------- Res-U-Net

/// Widths base * 2^i capped at max_width. Output = skip projection of the
/// input (identity when in_channels == bands) + a 1x1 projection of the U-Net
/// body. zero_residual zeroes that last projection, making the net the skip path.
ParameterSet init_res_unet(const std::string& prefix, std::size_t depth, std::size_t in_channels,
                           std::size_t bands, std::size_t base_width, std::size_t max_width,
                           std::uint64_t seed, bool zero_residual = false);
ad::Var res_unet_forward(const ad::Var& x, const BoundParams& params, const std::string& prefix,
                         std::size_t depth);
Tensor res_unet_forward(const Tensor& x, const ParameterSet& params, const std::string& prefix,
                        std::size_t depth);

/// Throws if h or w is not a multiple of 2^(depth-1).
void check_unet_size(std::size_t depth, std::size_t h, std::size_t w);

// --------------------------------------------------------- Unfolding-Net

/// Band l copies the rgb channel with the largest response at l (lowest index on ties).
std::vector<std::size_t> nearest_channel(const Tensor& response);
ad::Var unfold_init(const ad::Var& rgb, const Tensor& response);
Tensor unfold_init(const Tensor& rgb, const ResponseCurve& response);

/// I - alpha * (-2 O^T(rgb - O(I)) + 2 eta (I - Z)); alpha, eta are {1} Vars.
ad::Var model_step(const optics::EncodingOperator& op, const ad::Var& i_prev,
                   const ad::Var& z_prev, const ad::Var& rgb, const ad::Var& alpha,
                   const ad::Var& eta);

/// ||rgb - O(I)||^2 + eta ||I - Z||^2
double hqs_objective(const optics::EncodingOperator& op, const Tensor& i, const Tensor& z,
                     const Tensor& rgb, double eta);

Tensor model_step_wem(const Tensor& i_prev, const Tensor& z_prev, const Tensor& rgb,
                      const ResponseCurve& response, double alpha, double eta);
/// physical: mask holds {H,W} logits (binarised, with shear); ideal: {L,H,W}.
Tensor model_step_aem(const Tensor& i_prev, const Tensor& z_prev, const Tensor& rgb,
                      const Tensor& mask, bool physical, const ResponseCurve& response,
                      double alpha, double eta);
Tensor model_step_pem(const Tensor& i_prev, const Tensor& z_prev, const Tensor& rgb,
                      const Tensor& psf, const ResponseCurve& response, double alpha, double eta);

/// decoder.stage{k}.{alpha_raw,eta_raw} (softplus-parameterised) and a
/// Res-U-Net per stage under decoder.stage{k}.unet.
ParameterSet init_unfolding(const DecoderConfig& cfg, std::size_t bands, std::uint64_t seed,
                            bool zero_residual = false);
ad::Var unfolding_forward(const ad::Var& rgb, const optics::EncodingOperator& op,
                          const BoundParams& params, const DecoderConfig& cfg);

// ------------------------------------------------------------ dispatch

ParameterSet init_decoder(const DecoderConfig& cfg, std::size_t bands, std::uint64_t seed);

/// Reconstruct {L,H,W} from {3,H,W}. The operator is used by the unfolding
/// decoder only.
ad::Var decode(const DecoderConfig& cfg, const ad::Var& rgb, const optics::EncodingOperator& op,
               const BoundParams& params);

}  // namespace uem::decoders
