#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "uemkit/spectral_data.hpp"
#include "uemkit/tensor.hpp"

namespace uem::metrics {

inline constexpr double kPsnrCapDb = 99.0;
inline constexpr double kSamEps = 1e-12;
inline constexpr double kErgasEps = 1e-8;

/// 10 log10(max^2 / MSE), clamped to [0, 99] dB; 99 when MSE is zero.
double psnr(const Tensor& pred, const Tensor& gt, double max_val = 1.0);

struct PsnrSi {
  double value_db = 0.0;
  std::size_t skipped_bands = 0;
};
/// Mean over bands of the per-band PSNR with the peak set to the band's GT
/// maximum. Bands whose GT is identically zero are skipped and counted.
PsnrSi psnr_si_detail(const Tensor& pred, const Tensor& gt);
double psnr_si(const Tensor& pred, const Tensor& gt);

struct Sam {
  double value_rad = 0.0;
  std::size_t skipped_pixels = 0;
};
/// Mean per-pixel spectral angle; pixels where either spectrum has zero norm
/// are skipped and counted.
Sam sam_detail(const Tensor& pred, const Tensor& gt);
double sam(const Tensor& pred, const Tensor& gt, bool degrees = false);

/// 100 * ratio * sqrt(mean_l (RMSE_l / mean_l)^2). Bands with GT mean below
/// 1e-8 are excluded; with none left the result is 0.
double ergas(const Tensor& pred, const Tensor& gt, double ratio = 1.0);

/// Band l copies the rgb channel whose response at band l is largest (lowest
/// channel on ties). rgb is {3,H,W}, the result {L,H,W}.
Tensor nn_baseline(const Tensor& rgb, const ResponseCurve& response);

struct MetricReport {
  double psnr_db = 0.0;
  double psnr_si_db = 0.0;
  double sam_rad = 0.0;
  double ergas = 0.0;
  std::size_t psnr_si_skipped_bands = 0;
  std::size_t sam_skipped_pixels = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  /// psnr,psnr_si,sam,ergas at full precision.
  std::string csv_row() const;
  static std::string csv_header() { return "psnr,psnr_si,sam,ergas"; }
};

MetricReport evaluate(const Tensor& pred, const Tensor& gt);
/// Field-wise arithmetic mean; skip counters are summed.
MetricReport mean_report(const std::vector<MetricReport>& reports);

}  // namespace uem::metrics
