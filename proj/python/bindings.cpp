#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "uemkit/cli.hpp"
#include "uemkit/config.hpp"
#include "uemkit/decoders.hpp"
#include "uemkit/metrics.hpp"
#include "uemkit/optics.hpp"
#include "uemkit/spectral_data.hpp"
#include "uemkit/training.hpp"

namespace py = pybind11;
using namespace uem;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

ResponseCurve to_response(const Array& weights, std::vector<double> wavelengths_nm) {
  ResponseCurve r;
  r.weights = to_tensor(weights);
  if (wavelengths_nm.empty()) wavelengths_nm = uniform_wavelengths(r.weights.rank() == 2 ? r.weights.dim(1) : 0);
  r.wavelengths_nm = std::move(wavelengths_nm);
  return r;
}

optics::OpticalSetup setup_from(const py::dict& kw) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : kw) kv["optics." + py::str(k).cast<std::string>()] = py::str(v).cast<std::string>();
  return config::run_config_from(kv).train.optics;  // rejects unknown keys
}

std::map<std::string, std::string> kv_from(const py::dict& d) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : d) {
    std::string s = py::isinstance<py::bool_>(v) ? (v.cast<bool>() ? "true" : "false")
                                                 : py::str(v).cast<std::string>();
    kv[py::str(k).cast<std::string>()] = s;
  }
  return kv;
}

py::dict report_dict(const metrics::MetricReport& m) {
  py::dict d;
  d["psnr"] = m.psnr_db;
  d["psnr_si"] = m.psnr_si_db;
  d["sam"] = m.sam_rad;
  d["ergas"] = m.ergas;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Spectral encoder/decoder toolkit: optics encoders, decoders, metrics and training.";

  m.def("uniform_wavelengths", &uniform_wavelengths, py::arg("bands"),
        py::arg("min_nm") = kDefaultMinWavelengthNm, py::arg("max_nm") = kDefaultMaxWavelengthNm);
  m.def(
      "default_response",
      [](const std::vector<double>& wl) { return to_array(default_response(wl).weights); },
      py::arg("wavelengths_nm"), "Built-in {3,L} camera response.");
  m.def(
      "synth_scene",
      [](std::uint64_t seed, std::size_t h, std::size_t w, std::size_t bands, double smoothness) {
        return to_array(synth_scene(seed, h, w, bands, smoothness).to_tensor());
      },
      py::arg("seed"), py::arg("height"), py::arg("width"), py::arg("bands"),
      py::arg("smoothness") = 2.0);

  m.def(
      "encode_wem",
      [](const Array& cube, const Array& response) {
        const Tensor c = to_tensor(cube);
        return to_array(optics::encode_wem(c, to_response(response, {})));
      },
      py::arg("cube"), py::arg("response"));
  m.def(
      "encode_aem",
      [](const Array& cube, const Array& mask, bool physical, const Array& response) {
        return to_array(optics::encode_aem(to_tensor(cube), to_tensor(mask), physical,
                                           to_response(response, {})));
      },
      py::arg("cube"), py::arg("mask"), py::arg("physical"), py::arg("response"));
  m.def(
      "encode_pem",
      [](const Array& cube, const Array& psf, const Array& response) {
        return to_array(optics::encode_pem(to_tensor(cube), to_tensor(psf), to_response(response, {})));
      },
      py::arg("cube"), py::arg("psf"), py::arg("response"));
  m.def(
      "radial_to_2d",
      [](const Array& profile, const py::kwargs& optics) {
        return to_array(optics::radial_to_2d(to_tensor(profile), setup_from(optics)));
      },
      py::arg("profile"), "Height map from a radial profile; optics keys as keyword arguments.");
  m.def(
      "height_to_psf",
      [](const Array& height_map, const std::vector<double>& wl, const py::kwargs& optics) {
        return to_array(optics::height_to_psf(to_tensor(height_map), setup_from(optics), wl));
      },
      py::arg("height_map"), py::arg("wavelengths_nm"));
  m.def(
      "nn_baseline",
      [](const Array& rgb, const Array& response) {
        return to_array(metrics::nn_baseline(to_tensor(rgb), to_response(response, {})));
      },
      py::arg("rgb"), py::arg("response"));

  m.def("psnr", [](const Array& p, const Array& g) { return metrics::psnr(to_tensor(p), to_tensor(g)); });
  m.def("psnr_si", [](const Array& p, const Array& g) { return metrics::psnr_si(to_tensor(p), to_tensor(g)); });
  m.def(
      "sam", [](const Array& p, const Array& g, bool deg) { return metrics::sam(to_tensor(p), to_tensor(g), deg); },
      py::arg("pred"), py::arg("gt"), py::arg("degrees") = false);
  m.def("ergas", [](const Array& p, const Array& g) { return metrics::ergas(to_tensor(p), to_tensor(g)); });

  m.def(
      "train",
      [](const py::dict& cfg) {
        const config::RunConfig rc = config::run_config_from(kv_from(cfg));
        training::TrainReport report;
        {
          py::gil_scoped_release release;
          auto [train, val] = config::load_datasets(rc);
          report = rc.train.encoder == optics::EncoderVariant::UemI
                       ? training::train_full_uem(rc.train, train, val)
                       : training::train_joint(rc.train, train, val);
        }
        py::dict out;
        out["train_loss"] = report.train_loss;
        py::list val;
        for (const auto& v : report.val_metrics) val.append(report_dict(v));
        out["val"] = val;
        py::dict params;
        for (const auto& [name, t] : report.final_params.items()) params[py::str(name)] = to_array(t);
        out["params"] = params;
        return out;
      },
      py::arg("config"),
      "Joint training from a flat dict of config keys such as 'encoder.variant' or 'train.epochs'.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the uem tool in-process; returns (exit_code, stdout, stderr).");
}
