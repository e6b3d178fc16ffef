#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "uemkit/autodiff.hpp"
#include "uemkit/decoders.hpp"
#include "uemkit/metrics.hpp"
#include "uemkit/optics.hpp"
#include "uemkit/params.hpp"
#include "uemkit/spectral_data.hpp"

namespace uem::training {

enum class LossKind { Mae, Mse, Ergas };
LossKind parse_loss(std::string_view name);
std::string to_string(LossKind k);

ad::Var loss_mae(const ad::Var& pred, const Tensor& gt);
ad::Var loss_mse(const ad::Var& pred, const Tensor& gt);
/// The ERGAS metric as a differentiable loss; bands with GT mean below 1e-8
/// are excluded exactly as in metrics::ergas.
ad::Var loss_ergas(const ad::Var& pred, const Tensor& gt);
ad::Var loss(LossKind kind, const ad::Var& pred, const Tensor& gt);
double loss_value(LossKind kind, const Tensor& pred, const Tensor& gt);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// Post-step feasibility projections.
struct Projection {
  /// Clamp encoder.response to >= 0.
  bool nonnegative_response = false;
  /// Clamp encoder.heights to [0, height_max] when set.
  std::optional<double> height_max;
};

/// One bias-corrected Adam update of every parameter that has an entry in
/// `grads`, followed by the projections.
void adam_step(ParameterSet& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               double lr, const Projection& projection = {});

struct TrainConfig {
  optics::EncoderVariant encoder = optics::EncoderVariant::WemI;
  decoders::DecoderConfig decoder;
  LossKind loss = LossKind::Mae;
  double learning_rate = 1e-3;
  std::size_t epochs = 1;
  /// 0 or >= dataset size means full-batch.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  optics::OpticalSetup optics;
  std::size_t psf_size = 9;
  /// UEM-I only: mask = 1 and delta PSF at start; false composes the AEM-I
  /// and PEM-I initialisations instead.
  bool unit_init = true;
  /// Response of casts that do not learn one; default_response when unset.
  std::optional<ResponseCurve> fixed_response;
  /// Parameter names or dotted prefixes excluded from updates.
  std::vector<std::string> frozen;
  bool positivity_projection = true;
  bool height_clamp = true;
  std::size_t patch_size = 0;
  std::size_t patch_stride = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<metrics::MetricReport> val_metrics;
  ParameterSet final_params;
  double wall_time_s = 0.0;
  nlohmann::json config;

  const metrics::MetricReport& final_val() const { return val_metrics.back(); }
  /// Config echo, per-epoch history and a summary of the final parameters.
  nlohmann::json to_json() const;
  /// epoch,train_loss,val_psnr,val_psnr_si,val_sam,val_ergas
  std::string loss_csv() const;
  /// Numeric history and parameters equal; wall time is ignored.
  bool same_numbers(const TrainReport& other) const;
};

/// Encoder + decoder parameters at initialisation for the given data geometry.
ParameterSet init_parameters(const TrainConfig& config, std::size_t height, std::size_t width,
                             const std::vector<double>& wavelengths_nm);

/// Names updated by training under `config`: the cast's encoder group plus
/// every decoder parameter, minus frozen entries.
bool is_trainable(const TrainConfig& config, const std::string& name);

/// Encode (with noise when seeded), decode and compare with gt.
Tensor reconstruct(const TrainConfig& config, const ParameterSet& params, const Tensor& cube,
                   const std::vector<double>& wavelengths_nm,
                   std::optional<std::uint64_t> noise_seed = std::nullopt);

metrics::MetricReport evaluate_set(const TrainConfig& config, const ParameterSet& params,
                                   const std::vector<SpectralCube>& cubes);
std::vector<metrics::MetricReport> evaluate_each(const TrainConfig& config,
                                                 const ParameterSet& params,
                                                 const std::vector<SpectralCube>& cubes);

/// Nearest-neighbour baseline on the fixed response of `config`.
metrics::MetricReport baseline_metrics(const TrainConfig& config,
                                       const std::vector<SpectralCube>& cubes);

TrainReport train_joint(const TrainConfig& config, const std::vector<SpectralCube>& train,
                        const std::vector<SpectralCube>& val,
                        std::optional<ParameterSet> init = std::nullopt);

/// Runs as UEM-I: mask, PSF, response and decoder all learn.
TrainReport train_full_uem(TrainConfig config, const std::vector<SpectralCube>& train,
                           const std::vector<SpectralCube>& val);

struct CandidateResult {
  std::size_t index = 0;
  std::string name;
  metrics::MetricReport val;
  std::vector<double> train_loss;
};

struct SelectionResult {
  std::size_t best = 0;
  /// Best first: higher PSNR, then lower SAM, then input order.
  std::vector<CandidateResult> ranked;
};

/// Trains a WEM-P system per candidate response under the same config and seed.
SelectionResult select_response(const std::vector<ResponseCurve>& candidates,
                                const std::vector<std::string>& names, TrainConfig config,
                                const std::vector<SpectralCube>& train,
                                const std::vector<SpectralCube>& val);

}  // namespace uem::training
