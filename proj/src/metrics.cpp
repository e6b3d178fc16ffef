#include "uemkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "uemkit/decoders.hpp"

namespace uem::metrics {

namespace {

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_cube(const char* op, const Tensor& t) {
  if (t.rank() != 3) throw ShapeError(std::string(op) + ": expected [L,H,W], got " + shape_str(t.shape()));
}

double capped_psnr(double peak_sq, double mse) {
  if (mse <= 0.0) return kPsnrCapDb;
  return std::clamp(10.0 * std::log10(peak_sq / mse), 0.0, kPsnrCapDb);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double psnr(const Tensor& pred, const Tensor& gt, double max_val) {
  require_same("psnr", pred, gt);
  if (gt.empty()) throw ShapeError("psnr: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double d = pred[i] - gt[i];
    se += d * d;
  }
  return capped_psnr(max_val * max_val, se / static_cast<double>(gt.size()));
}

PsnrSi psnr_si_detail(const Tensor& pred, const Tensor& gt) {
  require_same("psnr_si", pred, gt);
  require_cube("psnr_si", gt);
  const std::size_t bands = gt.dim(0);
  const std::size_t plane = gt.dim(1) * gt.dim(2);
  PsnrSi out;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t l = 0; l < bands; ++l) {
    double peak = 0.0;
    bool all_zero = true;
    double se = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const double g = gt[l * plane + p];
      if (g != 0.0) all_zero = false;
      peak = std::max(peak, g);
      const double d = pred[l * plane + p] - g;
      se += d * d;
    }
    if (all_zero) {
      ++out.skipped_bands;
      continue;
    }
    total += capped_psnr(peak * peak, se / static_cast<double>(plane));
    ++used;
  }
  out.value_db = used ? total / static_cast<double>(used) : 0.0;
  return out;
}

double psnr_si(const Tensor& pred, const Tensor& gt) { return psnr_si_detail(pred, gt).value_db; }

Sam sam_detail(const Tensor& pred, const Tensor& gt) {
  require_same("sam", pred, gt);
  require_cube("sam", gt);
  const std::size_t bands = gt.dim(0);
  const std::size_t plane = gt.dim(1) * gt.dim(2);
  Sam out;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t l = 0; l < bands; ++l) {
      const double u = pred[l * plane + p];
      const double v = gt[l * plane + p];
      uv += u * v;
      uu += u * u;
      vv += v * v;
    }
    const double nu = std::sqrt(uu);
    const double nv = std::sqrt(vv);
    if (nu < kSamEps || nv < kSamEps) {
      ++out.skipped_pixels;
      continue;
    }
    total += std::acos(std::clamp(uv / (nu * nv), -1.0, 1.0));
    ++used;
  }
  out.value_rad = used ? total / static_cast<double>(used) : 0.0;
  return out;
}

double sam(const Tensor& pred, const Tensor& gt, bool degrees) {
  const double r = sam_detail(pred, gt).value_rad;
  return degrees ? r * 180.0 / std::numbers::pi : r;
}

double ergas(const Tensor& pred, const Tensor& gt, double ratio) {
  require_same("ergas", pred, gt);
  require_cube("ergas", gt);
  const std::size_t bands = gt.dim(0);
  const std::size_t plane = gt.dim(1) * gt.dim(2);
  const double n = static_cast<double>(plane);
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t l = 0; l < bands; ++l) {
    double se = 0.0, s = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      const double g = gt[l * plane + p];
      const double d = pred[l * plane + p] - g;
      se += d * d;
      s += g;
    }
    const double mu = s / n;
    if (std::abs(mu) < kErgasEps) continue;
    acc += (se / n) / (mu * mu);
    ++used;
  }
  if (used == 0) return 0.0;
  return 100.0 * ratio * std::sqrt(acc / static_cast<double>(used));
}

Tensor nn_baseline(const Tensor& rgb, const ResponseCurve& response) {
  return decoders::unfold_init(rgb, response);
}

nlohmann::json MetricReport::to_json() const {
  return {{"psnr", psnr_db},
          {"psnr_si", psnr_si_db},
          {"sam", sam_rad},
          {"ergas", ergas},
          {"psnr_si_skipped_bands", psnr_si_skipped_bands},
          {"sam_skipped_pixels", sam_skipped_pixels}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.psnr_db = j.at("psnr").get<double>();
  r.psnr_si_db = j.at("psnr_si").get<double>();
  r.sam_rad = j.at("sam").get<double>();
  r.ergas = j.at("ergas").get<double>();
  r.psnr_si_skipped_bands = j.value("psnr_si_skipped_bands", std::size_t{0});
  r.sam_skipped_pixels = j.value("sam_skipped_pixels", std::size_t{0});
  return r;
}

std::string MetricReport::csv_row() const {
  return fmt(psnr_db) + "," + fmt(psnr_si_db) + "," + fmt(sam_rad) + "," + fmt(ergas);
}

MetricReport evaluate(const Tensor& pred, const Tensor& gt) {
  MetricReport r;
  r.psnr_db = psnr(pred, gt);
  const PsnrSi si = psnr_si_detail(pred, gt);
  r.psnr_si_db = si.value_db;
  r.psnr_si_skipped_bands = si.skipped_bands;
  const Sam s = sam_detail(pred, gt);
  r.sam_rad = s.value_rad;
  r.sam_skipped_pixels = s.skipped_pixels;
  r.ergas = ergas(pred, gt);
  return r;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.psnr_db += r.psnr_db;
    m.psnr_si_db += r.psnr_si_db;
    m.sam_rad += r.sam_rad;
    m.ergas += r.ergas;
    m.psnr_si_skipped_bands += r.psnr_si_skipped_bands;
    m.sam_skipped_pixels += r.sam_skipped_pixels;
  }
  const double n = static_cast<double>(reports.size());
  m.psnr_db /= n;
  m.psnr_si_db /= n;
  m.sam_rad /= n;
  m.ergas /= n;
  return m;
}

}  // namespace uem::metrics
