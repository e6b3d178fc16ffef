#include "uemkit/decoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <stdexcept>

namespace uem::decoders {

namespace {

Tensor he_normal(std::mt19937_64& rng, std::size_t co, std::size_t ci, std::size_t k) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(ci * k * k)));
  Tensor t(Shape{co, ci, k, k});
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void add_conv(ParameterSet& p, const std::string& name, std::mt19937_64& rng, std::size_t co,
              std::size_t ci, std::size_t k) {
  p.set(name + ".weight", he_normal(rng, co, ci, k));
  p.set(name + ".bias", Tensor(Shape{co}));
}

ad::Var conv(const BoundParams& p, const std::string& name, const ad::Var& x) {
  return ad::conv2d(x, p[name + ".weight"], p[name + ".bias"]);
}

std::size_t level_width(std::size_t i, std::size_t base, std::size_t cap) {
  std::size_t w = base;
  for (std::size_t j = 0; j < i && w < cap; ++j) w *= 2;
  return std::min(w, cap);
}

// a = 1x1 projection when the width changes; out = a + conv(relu(conv(a))).
void add_resblock(ParameterSet& p, const std::string& name, std::mt19937_64& rng, std::size_t ci,
                  std::size_t co) {
  if (ci != co) add_conv(p, name + ".proj", rng, co, ci, 1);
  add_conv(p, name + ".conv1", rng, co, co, 3);
  add_conv(p, name + ".conv2", rng, co, co, 3);
}

ad::Var resblock(const BoundParams& p, const std::string& name, const ad::Var& x) {
  ad::Var a = p.contains(name + ".proj.weight") ? conv(p, name + ".proj", x) : x;
  return ad::add(a, conv(p, name + ".conv2", ad::relu(conv(p, name + ".conv1", a))));
}

double softplus_inverse(double y) { return y + std::log(-std::expm1(-y)); }

std::string stage_name(std::size_t k) { return std::string(kPrefix) + "stage" + std::to_string(k); }

template <typename Build>
Tensor run_detached(const ParameterSet& params, Build&& build) {
  ad::Tape tape;
  BoundParams bound(tape, params, {});
  return build(tape, bound).value();
}

}  // namespace

DecoderVariant parse_decoder_variant(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "simconv" || s == "sim-conv" || s == "sim-conv-net") return DecoderVariant::SimConv;
  if (s == "resunet" || s == "res-unet" || s == "res-u-net") return DecoderVariant::ResUNet;
  if (s == "unfolding" || s == "unfolding-net") return DecoderVariant::Unfolding;
  throw std::invalid_argument("unknown decoder variant '" + std::string(name) + "'");
}

std::string to_string(DecoderVariant v) {
  switch (v) {
    case DecoderVariant::SimConv: return "simconv";
    case DecoderVariant::ResUNet: return "resunet";
    case DecoderVariant::Unfolding: return "unfolding";
  }
  throw std::invalid_argument("bad decoder variant");
}

void DecoderConfig::validate() const {
  if (kernel % 2 == 0) throw std::invalid_argument("decoder kernel size must be odd");
  if (hidden == 0 || base_width == 0 || max_width == 0) {
    throw std::invalid_argument("decoder widths must be positive");
  }
  if (depth == 0 || unfold_depth == 0) throw std::invalid_argument("decoder depth must be >= 1");
  if (unfold_iters == 0) throw std::invalid_argument("unfolding needs at least one iteration");
  if (!(alpha_init > 0) || !(eta_init > 0)) {
    throw std::invalid_argument("unfolding alpha and eta must start positive");
  }
}

// ---------------------------------------------------------- Sim-Conv-Net

ParameterSet init_sim_conv(const DecoderConfig& cfg, std::size_t in_channels, std::size_t bands,
                           std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(stream_seed(seed, "decoder.simconv"));
  const std::size_t widths[] = {in_channels, cfg.hidden, cfg.hidden, cfg.hidden, bands};
  ParameterSet p;
  for (std::size_t i = 0; i < 4; ++i) {
    add_conv(p, std::string(kPrefix) + "conv" + std::to_string(i), rng, widths[i + 1], widths[i],
             cfg.kernel);
  }
  return p;
}

ad::Var sim_conv_forward(const ad::Var& rgb, const BoundParams& params) {
  ad::Var x = rgb;
  for (std::size_t i = 0; i < 4; ++i) {
    x = conv(params, std::string(kPrefix) + "conv" + std::to_string(i), x);
    if (i < 3) x = ad::relu(x);
  }
  return x;
}

Tensor sim_conv_forward(const Tensor& rgb, const ParameterSet& params) {
  return run_detached(params, [&](ad::Tape& t, const BoundParams& b) {
    return sim_conv_forward(t.constant(rgb), b);
  });
}

// ------------------------------------------------------------- Res-U-Net

void check_unet_size(std::size_t depth, std::size_t h, std::size_t w) {
  const std::size_t m = std::size_t{1} << (depth - 1);
  if (h % m != 0 || w % m != 0) {
    throw ShapeError("res_unet: a depth-" + std::to_string(depth) + " Res-U-Net needs height and "
                     "width divisible by " + std::to_string(m) + ", got " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
}

ParameterSet init_res_unet(const std::string& prefix, std::size_t depth, std::size_t in_channels,
                           std::size_t bands, std::size_t base_width, std::size_t max_width,
                           std::uint64_t seed, bool zero_residual) {
  if (depth == 0) throw std::invalid_argument("res_unet: depth must be >= 1");
  std::mt19937_64 rng(stream_seed(seed, prefix));
  ParameterSet p;
  std::size_t ci = in_channels;
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    const std::size_t w = level_width(i, base_width, max_width);
    add_resblock(p, prefix + ".down" + std::to_string(i), rng, ci, w);
    ci = w;
  }
  const std::size_t wb = level_width(depth - 1, base_width, max_width);
  add_resblock(p, prefix + ".mid", rng, ci, wb);
  ci = wb;
  for (std::size_t i = depth - 1; i-- > 0;) {
    const std::size_t w = level_width(i, base_width, max_width);
    add_resblock(p, prefix + ".up" + std::to_string(i), rng, ci + w, w);
    ci = w;
  }
  if (in_channels != bands) add_conv(p, prefix + ".skip_proj", rng, bands, in_channels, 1);
  add_conv(p, prefix + ".proj_out", rng, bands, ci, 1);
  if (zero_residual) {
    for (double& v : p.get(prefix + ".proj_out.weight").data()) v = 0.0;
  }
  return p;
}

ad::Var res_unet_forward(const ad::Var& x, const BoundParams& params, const std::string& prefix,
                         std::size_t depth) {
  if (x.shape().size() != 3) {
    throw ShapeError("res_unet: expected [C,H,W], got " + shape_str(x.shape()));
  }
  check_unet_size(depth, x.shape()[1], x.shape()[2]);
  std::vector<ad::Var> skips;
  ad::Var h = x;
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    h = resblock(params, prefix + ".down" + std::to_string(i), h);
    skips.push_back(h);
    h = ad::avg_pool2d(h, 2);
  }
  h = resblock(params, prefix + ".mid", h);
  for (std::size_t i = depth - 1; i-- > 0;) {
    h = ad::concat_channels(ad::upsample_nearest2d(h, 2), skips[i]);
    h = resblock(params, prefix + ".up" + std::to_string(i), h);
  }
  ad::Var skip = params.contains(prefix + ".skip_proj.weight") ? conv(params, prefix + ".skip_proj", x) : x;
  return ad::add(skip, conv(params, prefix + ".proj_out", h));
}

Tensor res_unet_forward(const Tensor& x, const ParameterSet& params, const std::string& prefix,
                        std::size_t depth) {
  return run_detached(params, [&](ad::Tape& t, const BoundParams& b) {
    return res_unet_forward(t.constant(x), b, prefix, depth);
  });
}

// --------------------------------------------------------- Unfolding-Net

std::vector<std::size_t> nearest_channel(const Tensor& response) {
  if (response.rank() != 2 || response.dim(0) == 0) {
    throw ShapeError("nearest_channel: expected [C,L] response, got " + shape_str(response.shape()));
  }
  const std::size_t c = response.dim(0);
  const std::size_t bands = response.dim(1);
  std::vector<std::size_t> idx(bands, 0);
  for (std::size_t l = 0; l < bands; ++l) {
    double best = response[l];
    for (std::size_t k = 1; k < c; ++k) {
      if (response[k * bands + l] > best) {
        best = response[k * bands + l];
        idx[l] = k;
      }
    }
  }
  return idx;
}

ad::Var unfold_init(const ad::Var& rgb, const Tensor& response) {
  if (rgb.shape().size() != 3 || rgb.shape()[0] != response.dim(0)) {
    throw ShapeError("unfold_init: rgb " + shape_str(rgb.shape()) + " vs response " +
                     shape_str(response.shape()));
  }
  return ad::select_channels(rgb, nearest_channel(response));
}

Tensor unfold_init(const Tensor& rgb, const ResponseCurve& response) {
  ad::Tape tape;
  return unfold_init(tape.constant(rgb), response.weights).value();
}

ad::Var model_step(const optics::EncodingOperator& op, const ad::Var& i_prev,
                   const ad::Var& z_prev, const ad::Var& rgb, const ad::Var& alpha,
                   const ad::Var& eta) {
  ad::Var residual = ad::sub(rgb, op.forward(i_prev));
  ad::Var data_grad = ad::scale(op.adjoint(residual), -2.0);
  ad::Var prior_grad = ad::scale_by(ad::sub(i_prev, z_prev), ad::scale(eta, 2.0));
  return ad::sub(i_prev, ad::scale_by(ad::add(data_grad, prior_grad), alpha));
}

double hqs_objective(const optics::EncodingOperator& op, const Tensor& i, const Tensor& z,
                     const Tensor& rgb, double eta) {
  ad::Tape& tape = *op.response.tape();
  const Tensor pred = op.forward(tape.constant(i)).value();
  double data = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double d = rgb[k] - pred[k];
    data += d * d;
  }
  double prior = 0.0;
  for (std::size_t k = 0; k < i.size(); ++k) {
    const double d = i[k] - z[k];
    prior += d * d;
  }
  return data + eta * prior;
}

namespace {

Tensor step_with(ad::Tape& tape, const optics::EncodingOperator& op, const Tensor& i_prev,
                 const Tensor& z_prev, const Tensor& rgb, double alpha, double eta) {
  if (!(alpha > 0) || !(eta > 0)) throw std::invalid_argument("model step: alpha and eta must be positive");
  return model_step(op, tape.constant(i_prev), tape.constant(z_prev), tape.constant(rgb),
                    tape.constant(Tensor::scalar(alpha)), tape.constant(Tensor::scalar(eta)))
      .value();
}

optics::EncodingOperator base_operator(ad::Tape& tape, const ResponseCurve& response) {
  optics::EncodingOperator op;
  op.quad = quadrature_weights(response.wavelengths_nm);
  op.response = tape.constant(response.weights);
  return op;
}

}  // namespace

Tensor model_step_wem(const Tensor& i_prev, const Tensor& z_prev, const Tensor& rgb,
                      const ResponseCurve& response, double alpha, double eta) {
  ad::Tape tape;
  return step_with(tape, base_operator(tape, response), i_prev, z_prev, rgb, alpha, eta);
}

Tensor model_step_aem(const Tensor& i_prev, const Tensor& z_prev, const Tensor& rgb,
                      const Tensor& mask, bool physical, const ResponseCurve& response,
                      double alpha, double eta) {
  ad::Tape tape;
  optics::EncodingOperator op = base_operator(tape, response);
  if (physical) {
    op.mask = ad::broadcast_channels(optics::binarize_mask(tape.constant(mask)), i_prev.dim(0));
    op.shear = true;
  } else {
    op.mask = tape.constant(mask);
  }
  return step_with(tape, op, i_prev, z_prev, rgb, alpha, eta);
}

Tensor model_step_pem(const Tensor& i_prev, const Tensor& z_prev, const Tensor& rgb,
                      const Tensor& psf, const ResponseCurve& response, double alpha, double eta) {
  ad::Tape tape;
  optics::EncodingOperator op = base_operator(tape, response);
  op.psf = tape.constant(psf);
  return step_with(tape, op, i_prev, z_prev, rgb, alpha, eta);
}

ParameterSet init_unfolding(const DecoderConfig& cfg, std::size_t bands, std::uint64_t seed,
                            bool zero_residual) {
  cfg.validate();
  ParameterSet p;
  for (std::size_t k = 0; k < cfg.unfold_iters; ++k) {
    const std::string s = stage_name(k);
    p.set(s + ".alpha_raw", Tensor::scalar(softplus_inverse(cfg.alpha_init)));
    p.set(s + ".eta_raw", Tensor::scalar(softplus_inverse(cfg.eta_init)));
    p.merge(init_res_unet(s + ".unet", cfg.unfold_depth, bands, bands, cfg.base_width,
                          cfg.max_width, seed, zero_residual));
  }
  return p;
}

ad::Var unfolding_forward(const ad::Var& rgb, const optics::EncodingOperator& op,
                          const BoundParams& params, const DecoderConfig& cfg) {
  ad::Var z = unfold_init(rgb, op.response.value());
  ad::Var i = z;
  for (std::size_t k = 0; k < cfg.unfold_iters; ++k) {
    const std::string s = stage_name(k);
    ad::Var alpha = ad::softplus(params[s + ".alpha_raw"]);
    ad::Var eta = ad::softplus(params[s + ".eta_raw"]);
    i = model_step(op, i, z, rgb, alpha, eta);
    z = res_unet_forward(i, params, s + ".unet", cfg.unfold_depth);
  }
  return z;
}

// ------------------------------------------------------------ dispatch

ParameterSet init_decoder(const DecoderConfig& cfg, std::size_t bands, std::uint64_t seed) {
  cfg.validate();
  switch (cfg.variant) {
    case DecoderVariant::SimConv: return init_sim_conv(cfg, 3, bands, seed);
    case DecoderVariant::ResUNet:
      return init_res_unet(std::string(kPrefix) + "unet", cfg.depth, 3, bands, cfg.base_width,
                           cfg.max_width, seed);
    case DecoderVariant::Unfolding: return init_unfolding(cfg, bands, seed);
  }
  throw std::invalid_argument("bad decoder variant");
}

ad::Var decode(const DecoderConfig& cfg, const ad::Var& rgb, const optics::EncodingOperator& op,
               const BoundParams& params) {
  switch (cfg.variant) {
    case DecoderVariant::SimConv: return sim_conv_forward(rgb, params);
    case DecoderVariant::ResUNet:
      return res_unet_forward(rgb, params, std::string(kPrefix) + "unet", cfg.depth);
    case DecoderVariant::Unfolding: return unfolding_forward(rgb, op, params, cfg);
  }
  throw std::invalid_argument("bad decoder variant");
}

}  // namespace uem::decoders
