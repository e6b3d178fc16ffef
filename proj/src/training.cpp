#include "uemkit/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace uem::training {

namespace {

void require_same(const char* op, const ad::Var& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(gt.shape()));
  }
}

bool name_matches(const std::string& name, const std::string& pattern) {
  return name == pattern ||
         (name.size() > pattern.size() && name.compare(0, pattern.size(), pattern) == 0 &&
          name[pattern.size()] == '.');
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ResponseCurve fixed_response_of(const TrainConfig& config, const std::vector<double>& wl) {
  if (config.fixed_response) {
    if (config.fixed_response->bands() != wl.size()) {
      throw ShapeError("fixed response has " + std::to_string(config.fixed_response->bands()) +
                       " bands, data has " + std::to_string(wl.size()));
    }
    return *config.fixed_response;
  }
  return default_response(wl);
}

const std::vector<double>& common_grid(const std::vector<SpectralCube>& a,
                                       const std::vector<SpectralCube>& b) {
  if (a.empty()) throw std::invalid_argument("training: empty training set");
  const SpectralCube& ref = a.front();
  auto check = [&](const SpectralCube& c) {
    c.validate();
    if (c.wavelengths_nm != ref.wavelengths_nm) {
      throw ShapeError("training: all cubes must share one band grid");
    }
    if (c.height != ref.height || c.width != ref.width) {
      throw ShapeError("training: all cubes must share one spatial size");
    }
  };
  for (const auto& c : a) check(c);
  for (const auto& c : b) check(c);
  return ref.wavelengths_nm;
}

Projection projection_for(const TrainConfig& config) {
  Projection p;
  p.nonnegative_response =
      config.positivity_projection && config.encoder == optics::EncoderVariant::WemIPc;
  if (config.height_clamp && config.encoder == optics::EncoderVariant::PemP) {
    p.height_max = config.optics.h_max_um;
  }
  return p;
}

Tensor noise_for(const Shape& shape, double sigma, std::uint64_t seed) {
  return add_gaussian_noise(Tensor(shape), sigma, seed);
}

std::uint64_t item_noise_seed(std::uint64_t seed, std::size_t epoch, std::size_t item) {
  return stream_seed(seed, "noise/" + std::to_string(epoch) + "/" + std::to_string(item));
}

}  // namespace

LossKind parse_loss(std::string_view name) {
  if (name == "mae") return LossKind::Mae;
  if (name == "mse") return LossKind::Mse;
  if (name == "ergas") return LossKind::Ergas;
  throw std::invalid_argument("unknown loss '" + std::string(name) + "'");
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Mae: return "mae";
    case LossKind::Mse: return "mse";
    case LossKind::Ergas: return "ergas";
  }
  throw std::invalid_argument("bad loss kind");
}

ad::Var loss_mae(const ad::Var& pred, const Tensor& gt) {
  require_same("loss_mae", pred, gt);
  return ad::mean(ad::abs(ad::sub(pred, pred.tape()->constant(gt))));
}

ad::Var loss_mse(const ad::Var& pred, const Tensor& gt) {
  require_same("loss_mse", pred, gt);
  return ad::mean(ad::square(ad::sub(pred, pred.tape()->constant(gt))));
}

ad::Var loss_ergas(const ad::Var& pred, const Tensor& gt) {
  require_same("loss_ergas", pred, gt);
  if (gt.rank() != 3) throw ShapeError("loss_ergas: expected [L,H,W], got " + shape_str(gt.shape()));
  ad::Tape& tape = *pred.tape();
  const std::size_t bands = gt.dim(0);
  const std::size_t plane = gt.dim(1) * gt.dim(2);
  const double n = static_cast<double>(plane);
  Tensor inv_mu2(Shape{bands});
  std::size_t used = 0;
  for (std::size_t l = 0; l < bands; ++l) {
    double s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) s += gt[l * plane + p];
    const double mu = s / n;
    if (std::abs(mu) < metrics::kErgasEps) continue;
    inv_mu2[l] = 1.0 / (mu * mu * n);
    ++used;
  }
  ad::Var per_band = ad::channel_sums(ad::square(ad::sub(pred, tape.constant(gt))));
  ad::Var ratio = ad::sum(ad::mul(per_band, tape.constant(std::move(inv_mu2))));
  if (used == 0) return ad::scale(ratio, 0.0);
  return ad::scale(ad::sqrt(ad::scale(ratio, 1.0 / static_cast<double>(used))), 100.0);
}

ad::Var loss(LossKind kind, const ad::Var& pred, const Tensor& gt) {
  switch (kind) {
    case LossKind::Mae: return loss_mae(pred, gt);
    case LossKind::Mse: return loss_mse(pred, gt);
    case LossKind::Ergas: return loss_ergas(pred, gt);
  }
  throw std::invalid_argument("bad loss kind");
}

double loss_value(LossKind kind, const Tensor& pred, const Tensor& gt) {
  ad::Tape tape;
  return loss(kind, tape.constant(pred), gt).value()[0];
}

// ------------------------------------------------------------------ Adam

void adam_step(ParameterSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr, const Projection& projection) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, value] : params.items()) {
    auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.shape() != value.shape()) {
      throw ShapeError("adam_step: gradient " + shape_str(g->second.shape()) + " for " + name + " " +
                       shape_str(value.shape()));
    }
    auto [mi, fresh_m] = state.m.try_emplace(name, value.shape());
    auto [vi, fresh_v] = state.v.try_emplace(name, value.shape());
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = g->second[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
  if (projection.nonnegative_response && params.contains(optics::kResponse)) {
    for (double& w : params.get(optics::kResponse).data()) w = std::max(w, 0.0);
  }
  if (projection.height_max && params.contains(optics::kHeights)) {
    for (double& h : params.get(optics::kHeights).data()) h = std::clamp(h, 0.0, *projection.height_max);
  }
}

// -------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be finite and non-negative");
  }
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
  if (!(noise_sigma >= 0)) throw std::invalid_argument("noise_sigma must be >= 0");
  if (psf_size % 2 == 0) throw std::invalid_argument("psf_size must be odd");
  decoder.validate();
  if (encoder == optics::EncoderVariant::PemP) optics.validate();
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j;
  j["encoder"] = {{"variant", optics::to_string(encoder)},
                  {"psf_size", psf_size},
                  {"unit_init", unit_init},
                  {"fixed_response", fixed_response.has_value()}};
  j["decoder"] = {{"variant", decoders::to_string(decoder.variant)},
                  {"kernel", decoder.kernel},
                  {"hidden", decoder.hidden},
                  {"depth", decoder.depth},
                  {"unfold_depth", decoder.unfold_depth},
                  {"base_width", decoder.base_width},
                  {"max_width", decoder.max_width},
                  {"unfold_iters", decoder.unfold_iters},
                  {"alpha_init", decoder.alpha_init},
                  {"eta_init", decoder.eta_init}};
  j["train"] = {{"loss", to_string(loss)},
                {"learning_rate", learning_rate},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"seed", seed},
                {"noise_sigma", noise_sigma},
                {"frozen", frozen},
                {"positivity", positivity_projection},
                {"height_clamp", height_clamp},
                {"patch_size", patch_size},
                {"patch_stride", patch_stride}};
  j["optics"] = {{"grid_n", optics.grid_n},
                 {"pitch_um", optics.pitch_um},
                 {"aperture_diameter_mm", optics.aperture_diameter_mm},
                 {"delta_n", optics.delta_n},
                 {"scene_distance_mm", optics.scene_distance_mm},
                 {"propagation_z_mm", optics.propagation_z_mm},
                 {"h_max_um", optics.h_max_um},
                 {"radial_samples", optics.radial_samples},
                 {"psf_window", optics.psf_window},
                 {"downsample", optics.downsample}};
  return j;
}

// --------------------------------------------------------------- report

nlohmann::json TrainReport::to_json() const {
  nlohmann::json j;
  j["config"] = config;
  j["train_loss"] = train_loss;
  j["val_metrics"] = nlohmann::json::array();
  for (const auto& m : val_metrics) j["val_metrics"].push_back(m.to_json());
  j["final_val"] = val_metrics.empty() ? nlohmann::json() : val_metrics.back().to_json();
  j["wall_time_s"] = wall_time_s;
  j["final_params"] = nlohmann::json::array();
  for (const auto& [name, t] : final_params.items()) {
    double sq = 0.0;
    for (double v : t.data()) sq += v * v;
    j["final_params"].push_back({{"name", name}, {"shape", t.shape()}, {"l2_norm", std::sqrt(sq)}});
  }
  return j;
}

std::string TrainReport::loss_csv() const {
  std::string out = "epoch,train_loss,val_psnr,val_psnr_si,val_sam,val_ergas\n";
  for (std::size_t e = 0; e < train_loss.size(); ++e) {
    out += std::to_string(e + 1) + "," + fmt(train_loss[e]);
    if (e < val_metrics.size()) out += "," + val_metrics[e].csv_row();
    out += "\n";
  }
  return out;
}

bool TrainReport::same_numbers(const TrainReport& other) const {
  if (train_loss != other.train_loss || val_metrics.size() != other.val_metrics.size()) return false;
  for (std::size_t i = 0; i < val_metrics.size(); ++i) {
    if (val_metrics[i].csv_row() != other.val_metrics[i].csv_row()) return false;
  }
  return final_params == other.final_params;
}

// ------------------------------------------------------------- training

ParameterSet init_parameters(const TrainConfig& config, std::size_t height, std::size_t width,
                             const std::vector<double>& wavelengths_nm) {
  optics::EncoderInit init;
  init.height = height;
  init.width = width;
  init.wavelengths_nm = wavelengths_nm;
  init.optics = config.optics;
  init.psf_size = config.psf_size;
  init.unit_init = config.unit_init;
  if (config.fixed_response) init.fixed_response = fixed_response_of(config, wavelengths_nm);
  ParameterSet p = optics::init_encoder(config.encoder, config.seed, init);
  p.merge(decoders::init_decoder(config.decoder, wavelengths_nm.size(), config.seed));
  return p;
}

bool is_trainable(const TrainConfig& config, const std::string& name) {
  for (const auto& f : config.frozen) {
    if (name_matches(name, f)) return false;
  }
  if (name_matches(name, "decoder")) return true;
  const auto group = optics::trainable_encoder_params(config.encoder);
  return std::find(group.begin(), group.end(), name) != group.end();
}

Tensor reconstruct(const TrainConfig& config, const ParameterSet& params, const Tensor& cube,
                   const std::vector<double>& wavelengths_nm, std::optional<std::uint64_t> noise_seed) {
  ad::Tape tape;
  BoundParams bound(tape, params, {});
  const auto op = optics::build_operator(config.encoder, bound, config.optics, wavelengths_nm);
  ad::Var rgb = op.forward(tape.constant(cube));
  if (noise_seed && config.noise_sigma > 0) {
    rgb = ad::add(rgb, tape.constant(noise_for(rgb.shape(), config.noise_sigma, *noise_seed)));
  }
  return decoders::decode(config.decoder, rgb, op, bound).value();
}

std::vector<metrics::MetricReport> evaluate_each(const TrainConfig& config,
                                                 const ParameterSet& params,
                                                 const std::vector<SpectralCube>& cubes) {
  std::vector<metrics::MetricReport> out;
  if (cubes.empty()) return out;
  ad::Tape tape;
  BoundParams bound(tape, params, {});
  const auto op =
      optics::build_operator(config.encoder, bound, config.optics, cubes.front().wavelengths_nm);
  for (const auto& c : cubes) {
    // Each cube gets a fresh tape for the decoder; the operator values are reused.
    const Tensor gt = c.to_tensor();
    ad::Tape local;
    BoundParams lb(local, params, {});
    optics::EncodingOperator lop = op;
    lop.response = local.constant(op.response.value());
    if (op.mask.valid()) lop.mask = local.constant(op.mask.value());
    if (op.psf.valid()) lop.psf = local.constant(op.psf.value());
    const Tensor pred = decoders::decode(config.decoder, lop.forward(local.constant(gt)), lop, lb).value();
    out.push_back(metrics::evaluate(pred, gt));
  }
  return out;
}

metrics::MetricReport evaluate_set(const TrainConfig& config, const ParameterSet& params,
                                   const std::vector<SpectralCube>& cubes) {
  return metrics::mean_report(evaluate_each(config, params, cubes));
}

metrics::MetricReport baseline_metrics(const TrainConfig& config,
                                       const std::vector<SpectralCube>& cubes) {
  std::vector<metrics::MetricReport> each;
  for (const auto& c : cubes) {
    const ResponseCurve r = fixed_response_of(config, c.wavelengths_nm);
    const Tensor gt = c.to_tensor();
    each.push_back(metrics::evaluate(metrics::nn_baseline(optics::encode_wem(gt, r), r), gt));
  }
  return metrics::mean_report(each);
}

TrainReport train_joint(const TrainConfig& config, const std::vector<SpectralCube>& train,
                        const std::vector<SpectralCube>& val, std::optional<ParameterSet> init) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double>& wl = common_grid(train, val);
  const std::size_t h = train.front().height;
  const std::size_t w = train.front().width;
  if (config.decoder.variant == decoders::DecoderVariant::ResUNet) {
    decoders::check_unet_size(config.decoder.depth, h, w);
  }
  if (config.decoder.variant == decoders::DecoderVariant::Unfolding) {
    decoders::check_unet_size(config.decoder.unfold_depth, h, w);
  }

  ParameterSet params = init ? std::move(*init) : init_parameters(config, h, w, wl);
  std::vector<Tensor> train_t;
  train_t.reserve(train.size());
  for (const auto& c : train) train_t.push_back(c.to_tensor());

  const Projection projection = projection_for(config);
  auto trainable = [&config](const std::string& n) { return is_trainable(config, n); };
  AdamState adam;
  std::mt19937_64 shuffle_rng(stream_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch =
      config.batch_size == 0 ? train.size() : std::min(config.batch_size, train.size());

  TrainReport report;
  report.config = config.to_json();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      ad::Tape tape;
      BoundParams bound(tape, params, trainable);
      const auto op = optics::build_operator(config.encoder, bound, config.optics, wl);
      ad::Var total;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t item = order[k];
        ad::Var rgb = op.forward(tape.constant(train_t[item]));
        if (config.noise_sigma > 0) {
          rgb = ad::add(rgb, tape.constant(noise_for(rgb.shape(), config.noise_sigma,
                                                     item_noise_seed(config.seed, epoch, item))));
        }
        ad::Var l = loss(config.loss, decoders::decode(config.decoder, rgb, op, bound), train_t[item]);
        total = total.valid() ? ad::add(total, l) : l;
      }
      ad::Var batch_loss = ad::scale(total, 1.0 / static_cast<double>(end - start));
      const double lv = batch_loss.value()[0];
      if (!std::isfinite(lv)) {
        throw TrainingDiverged("training diverged: loss " + fmt(lv) + " at epoch " +
                               std::to_string(epoch + 1) + ", batch starting at " +
                               std::to_string(start));
      }
      epoch_loss += lv * static_cast<double>(end - start);
      const ad::Gradients g = tape.backward(batch_loss);
      std::map<std::string, Tensor> grads;
      for (const auto& [name, var] : bound.vars()) {
        if (var.requires_grad()) grads.emplace(name, g.of(var));
      }
      adam_step(params, grads, adam, config.learning_rate, projection);
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    report.val_metrics.push_back(val.empty() ? metrics::MetricReport{}
                                             : evaluate_set(config, params, val));
  }
  report.final_params = std::move(params);
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

TrainReport train_full_uem(TrainConfig config, const std::vector<SpectralCube>& train,
                           const std::vector<SpectralCube>& val) {
  config.encoder = optics::EncoderVariant::UemI;
  return train_joint(config, train, val);
}

SelectionResult select_response(const std::vector<ResponseCurve>& candidates,
                                const std::vector<std::string>& names, TrainConfig config,
                                const std::vector<SpectralCube>& train,
                                const std::vector<SpectralCube>& val) {
  if (candidates.empty()) throw std::invalid_argument("select_response: no candidates");
  if (!names.empty() && names.size() != candidates.size()) {
    throw std::invalid_argument("select_response: one name per candidate required");
  }
  if (val.empty()) throw std::invalid_argument("select_response: empty validation set");
  config.encoder = optics::EncoderVariant::WemP;
  SelectionResult result;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    config.fixed_response = candidates[i];
    TrainReport r = train_joint(config, train, val);
    CandidateResult c;
    c.index = i;
    c.name = names.empty() ? "candidate" + std::to_string(i) : names[i];
    c.val = r.final_val();
    c.train_loss = std::move(r.train_loss);
    result.ranked.push_back(std::move(c));
  }
  std::stable_sort(result.ranked.begin(), result.ranked.end(),
                   [](const CandidateResult& a, const CandidateResult& b) {
                     if (a.val.psnr_db != b.val.psnr_db) return a.val.psnr_db > b.val.psnr_db;
                     if (a.val.sam_rad != b.val.sam_rad) return a.val.sam_rad < b.val.sam_rad;
                     return a.index < b.index;
                   });
  result.best = result.ranked.front().index;
  return result;
}

}  // namespace uem::training
