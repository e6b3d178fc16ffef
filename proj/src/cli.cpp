#include "uemkit/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "uemkit/config.hpp"
#include "uemkit/decoders.hpp"
#include "uemkit/image_io.hpp"
#include "uemkit/metrics.hpp"
#include "uemkit/optics.hpp"
#include "uemkit/params.hpp"
#include "uemkit/spectral_data.hpp"
#include "uemkit/training.hpp"

namespace uem::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

std::map<std::string, std::string> base_kv(const Globals& g) {
  std::map<std::string, std::string> kv;
  if (!g.config.empty()) kv = config::read_key_values(g.config);
  if (g.seed) kv["train.seed"] = std::to_string(*g.seed);
  return kv;
}

std::string require_out(const Globals& g, const char* cmd) {
  if (g.out.empty()) throw UsageError(std::string(cmd) + ": --out is required");
  return g.out;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

std::vector<SpectralCube> load_cubes(const std::vector<std::string>& paths,
                                     const config::RunConfig& rc) {
  std::vector<SpectralCube> cubes;
  for (const auto& p : paths) {
    SpectralCube c = load_scube(p);
    c.wavelengths_nm = uniform_wavelengths(c.bands, rc.data.min_wavelength_nm, rc.data.max_wavelength_nm);
    cubes.push_back(std::move(c));
  }
  return cubes;
}

std::string metrics_table(const std::vector<std::string>& names,
                          const std::vector<metrics::MetricReport>& rows) {
  std::string out = "cube," + metrics::MetricReport::csv_header() + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) out += names[i] + "," + rows[i].csv_row() + "\n";
  out += "mean," + metrics::mean_report(rows).csv_row() + "\n";
  return out;
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text;
  } else {
    io::write_text(out_path, text);
  }
}

struct LoadedCheckpoint {
  ParameterSet params;
  std::map<std::string, std::string> kv;
  config::RunConfig rc;
};

LoadedCheckpoint open_checkpoint(const std::string& path) {
  auto [params, meta] = load_checkpoint(path);
  LoadedCheckpoint lc;
  lc.params = std::move(params);
  if (meta.contains("config")) lc.kv = meta.at("config").get<std::map<std::string, std::string>>();
  lc.rc = config::run_config_from(lc.kv);
  return lc;
}

// ---------------------------------------------------------------- commands

int cmd_synth(const Globals& g, std::size_t h, std::size_t w, std::size_t bands, double smoothness,
              std::size_t count, std::ostream& out) {
  const std::string dst = require_out(g, "synth");
  if (h == 0 || w == 0 || bands == 0) throw UsageError("synth: --h, --w and --bands must be positive");
  if (smoothness < 0) throw UsageError("synth: --smoothness must be >= 0");
  const std::uint64_t seed = g.seed.value_or(0);
  if (count == 1) {
    save_scube(synth_scene(seed, h, w, bands, smoothness), dst);
    out << dst << "\n";
    return 0;
  }
  ensure_dir(dst);
  for (std::size_t i = 0; i < count; ++i) {
    const fs::path p = fs::path(dst) / ("scene_" + std::to_string(i) + ".scube");
    save_scube(synth_scene(seed + i, h, w, bands, smoothness), p);
    out << p.string() << "\n";
  }
  return 0;
}

int cmd_derive_psf(const Globals& g, const std::string& optics_path, const std::string& heights_path,
                   std::optional<std::size_t> window, std::ostream& out) {
  const fs::path dir = require_out(g, "derive-psf");
  std::map<std::string, std::string> kv;
  const std::string cfg = !optics_path.empty() ? optics_path : g.config;
  if (!cfg.empty()) kv = config::read_key_values(cfg);
  optics::OpticalSetup setup = config::optics_from(kv);
  if (window) setup.psf_window = *window;
  config::RunConfig rc;
  if (kv.count("optics.bands")) rc.data.bands = std::stoul(kv.at("optics.bands"));
  if (kv.count("optics.min_wavelength_nm")) rc.data.min_wavelength_nm = std::stod(kv.at("optics.min_wavelength_nm"));
  if (kv.count("optics.max_wavelength_nm")) rc.data.max_wavelength_nm = std::stod(kv.at("optics.max_wavelength_nm"));
  const Tensor profile = io::read_column_csv(heights_path);
  setup.radial_samples = profile.size();
  try {
    setup.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Tensor height_map = optics::radial_to_2d(profile, setup);
  const Tensor psf = optics::height_to_psf(height_map, setup, rc.wavelengths());
  ensure_dir(dir);
  io::write_tensor_csv(psf, dir / "psf.csv");
  io::write_png_stack(psf, dir, "psf");
  out << "wrote " << psf.dim(0) << " PSFs of " << psf.dim(1) << "x" << psf.dim(2) << " to "
      << dir.string() << "\n";
  return 0;
}

int cmd_encode(const Globals& g, const std::string& variant_name, const std::string& cube_path,
               const std::string& response_path, double noise_sigma,
               const std::string& checkpoint_path, std::ostream& out) {
  const fs::path dir = require_out(g, "encode");
  optics::EncoderVariant variant;
  try {
    variant = optics::parse_encoder_variant(variant_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (noise_sigma < 0) throw UsageError("encode: --noise-sigma must be >= 0");
  config::RunConfig rc = config::run_config_from(base_kv(g));
  const SpectralCube cube = load_cubes({cube_path}, rc).front();
  const auto wl = cube.wavelengths_nm;
  const ResponseCurve response =
      response_path.empty() ? default_response(wl) : load_response_csv(response_path);
  if (response.bands() != cube.bands) {
    throw ShapeError("encode: response has " + std::to_string(response.bands()) + " bands, cube has " +
                     std::to_string(cube.bands));
  }
  const Tensor x = cube.to_tensor();
  Tensor rgb;
  if (variant == optics::EncoderVariant::WemP && checkpoint_path.empty()) {
    rgb = optics::encode_wem(x, response);
  } else {
    ParameterSet params;
    if (!checkpoint_path.empty()) {
      params = open_checkpoint(checkpoint_path).params;
    } else {
      optics::EncoderInit init;
      init.height = cube.height;
      init.width = cube.width;
      init.wavelengths_nm = wl;
      init.optics = rc.train.optics;
      init.psf_size = rc.train.psf_size;
      init.fixed_response = response;
      params = optics::init_encoder(variant, rc.train.seed, init);
    }
    rgb = optics::encode(variant, x, params, rc.train.optics, wl);
  }
  if (noise_sigma > 0) rgb = add_gaussian_noise(rgb, noise_sigma, rc.train.seed);
  ensure_dir(dir);
  io::write_tensor_csv(rgb, dir / "rgb.csv");
  io::write_png(rgb, dir / "rgb.png");
  out << "wrote " << (dir / "rgb.csv").string() << "\n";
  return 0;
}

int cmd_train(const Globals& g, std::map<std::string, std::string> overrides, std::ostream& out) {
  const fs::path dir = require_out(g, "train");
  auto kv = base_kv(g);
  for (auto& [k, v] : overrides) kv[k] = v;
  const config::RunConfig rc = config::run_config_from(kv);
  auto [train, val] = config::load_datasets(rc);
  training::TrainReport report = rc.train.encoder == optics::EncoderVariant::UemI
                                     ? training::train_full_uem(rc.train, train, val)
                                     : training::train_joint(rc.train, train, val);
  ensure_dir(dir);
  nlohmann::json meta;
  meta["config"] = kv;
  meta["wavelengths_nm"] = train.front().wavelengths_nm;
  save_checkpoint(dir / "checkpoint.bin", report.final_params, meta);
  io::write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  io::write_text(dir / "loss.csv", report.loss_csv());
  const auto& f = report.final_val();
  out << "final train loss " << report.train_loss.back() << ", val psnr " << f.psnr_db << " dB\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint_path,
             const std::vector<std::string>& cube_paths, std::ostream& out) {
  LoadedCheckpoint lc = open_checkpoint(checkpoint_path);
  std::vector<SpectralCube> cubes;
  std::vector<std::string> names;
  if (!cube_paths.empty()) {
    cubes = load_cubes(cube_paths, lc.rc);
    names = cube_paths;
  } else {
    cubes = config::load_datasets(lc.rc).second;
    for (std::size_t i = 0; i < cubes.size(); ++i) names.push_back("val" + std::to_string(i));
  }
  const auto rows = training::evaluate_each(lc.rc.train, lc.params, cubes);
  emit(metrics_table(names, rows), g.out, out);
  return 0;
}

int cmd_select_response(const Globals& g, std::vector<std::string> responses,
                        std::map<std::string, std::string> overrides, std::ostream& out) {
  auto kv = base_kv(g);
  for (auto& [k, v] : overrides) kv[k] = v;
  config::RunConfig rc = config::run_config_from(kv);
  if (responses.empty()) responses = rc.response_candidates;
  if (responses.empty()) throw UsageError("select-response: no candidate responses given");
  auto [train, val] = config::load_datasets(rc);
  std::vector<ResponseCurve> candidates;
  std::vector<std::string> names;
  for (const auto& r : responses) {
    candidates.push_back(load_response_csv(r));
    names.push_back(fs::path(r).stem().string());
  }
  const auto result = training::select_response(candidates, names, rc.train, train, val);
  std::string table = "rank,name," + metrics::MetricReport::csv_header() + "\n";
  for (std::size_t i = 0; i < result.ranked.size(); ++i) {
    table += std::to_string(i + 1) + "," + result.ranked[i].name + "," + result.ranked[i].val.csv_row() + "\n";
  }
  emit(table, g.out, out);
  if (!g.out.empty()) out << "best: " << result.ranked.front().name << "\n";
  return 0;
}

int cmd_baseline(const Globals& g, const std::vector<std::string>& cube_paths,
                 const std::string& response_path, std::ostream& out) {
  config::RunConfig rc = config::run_config_from(base_kv(g));
  std::vector<SpectralCube> cubes;
  std::vector<std::string> names;
  if (!cube_paths.empty()) {
    cubes = load_cubes(cube_paths, rc);
    names = cube_paths;
  } else {
    cubes = config::load_datasets(rc).second;
    for (std::size_t i = 0; i < cubes.size(); ++i) names.push_back("val" + std::to_string(i));
  }
  std::vector<metrics::MetricReport> rows;
  for (const auto& c : cubes) {
    const ResponseCurve r = !response_path.empty() ? load_response_csv(response_path)
                            : rc.train.fixed_response ? *rc.train.fixed_response
                                                      : default_response(c.wavelengths_nm);
    const Tensor gt = c.to_tensor();
    rows.push_back(metrics::evaluate(metrics::nn_baseline(optics::encode_wem(gt, r), r), gt));
  }
  emit(metrics_table(names, rows), g.out, out);
  return 0;
}

int cmd_export_viz(const Globals& g, const std::string& checkpoint_path, std::ostream& out) {
  const fs::path dir = require_out(g, "export-viz");
  LoadedCheckpoint lc = open_checkpoint(checkpoint_path);
  const auto wl = lc.rc.wavelengths();
  ensure_dir(dir);
  const ParameterSet& p = lc.params;
  if (p.contains(optics::kMaskLogits)) {
    const Tensor mask = optics::binarize_mask(p.get(optics::kMaskLogits));
    io::write_tensor_csv(mask, dir / "mask.csv");
    io::write_png(mask, dir / "mask.png");
  }
  if (p.contains(optics::kMask)) {
    io::write_tensor_csv(p.get(optics::kMask), dir / "mask.csv");
    io::write_png_stack(p.get(optics::kMask), dir, "mask");
  }
  std::optional<Tensor> psf;
  if (p.contains(optics::kPsf)) psf = p.get(optics::kPsf);
  if (p.contains(optics::kHeights)) {
    optics::OpticalSetup setup = lc.rc.train.optics;
    const Tensor& heights = p.get(optics::kHeights);
    std::string text = "radius_index,height_um\n";
    for (std::size_t i = 0; i < heights.size(); ++i) {
      std::ostringstream os;
      os.precision(17);
      os << i << "," << heights[i] << "\n";
      text += os.str();
    }
    io::write_text(dir / "heights.csv", text);
    psf = optics::height_to_psf(optics::radial_to_2d(heights, setup), setup, wl);
  }
  if (psf) {
    io::write_tensor_csv(*psf, dir / "psf.csv");
    io::write_png_stack(*psf, dir, "psf");
  }
  if (p.contains(optics::kResponse)) {
    const Tensor& w = p.get(optics::kResponse);
    ResponseCurve r{wl, optics::learns_response(lc.rc.train.encoder) ? optics::response_from_band_weights(w, wl) : w,
                    false};
    save_response_csv(r, dir / "response.csv");
  }
  out << "exported to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unified encoding model toolkit for computational spectral imaging", "uem"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Key-value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--out", g.out, "Output file or directory");

  auto* synth = app.add_subcommand("synth", "Write synthetic spectral cubes")->fallthrough();
  synth->set_help_flag("--help", "Print this help message and exit");
  std::size_t sh = 64, sw = 64, sbands = 8, scount = 1;
  double smooth = 2.0;
  synth->add_option("--h", sh, "Height")->capture_default_str();
  synth->add_option("--w", sw, "Width")->capture_default_str();
  synth->add_option("--bands", sbands, "Band count")->capture_default_str();
  synth->add_option("--smoothness", smooth, "Spectral smoothing width in bands")->capture_default_str();
  synth->add_option("--count", scount, "Number of scenes; >1 writes a directory")->capture_default_str();

  auto* derive = app.add_subcommand("derive-psf", "Derive per-band PSFs from a DOE height profile")->fallthrough();
  std::string optics_path, heights_path;
  std::optional<std::size_t> psf_window;
  derive->add_option("--optics", optics_path, "Optics config file")->check(CLI::ExistingFile);
  derive->add_option("--heights", heights_path, "Radial height profile CSV (um)")->required()->check(CLI::ExistingFile);
  derive->add_option("--psf-window", psf_window, "Odd PSF window size");

  auto* encode = app.add_subcommand("encode", "Encode a cube to an RGB measurement")->fallthrough();
  std::string variant = "wem-p", cube_path, response_path, enc_ckpt;
  double noise_sigma = 0.0;
  encode->add_option("--variant", variant, "Encoder variant")->capture_default_str();
  encode->add_option("--cube", cube_path, ".scube input")->required()->check(CLI::ExistingFile);
  encode->add_option("--response", response_path, "Response CSV")->check(CLI::ExistingFile);
  encode->add_option("--noise-sigma", noise_sigma, "Additive Gaussian noise")->capture_default_str();
  encode->add_option("--checkpoint", enc_ckpt, "Encoder parameters")->check(CLI::ExistingFile);

  const std::vector<std::string> encoders{"aem-p", "aem-i", "pem-p", "pem-i", "wem-p", "wem-i", "wem-i-pc", "uem-i"};
  auto* train = app.add_subcommand("train", "Jointly train an encoder and a decoder")->fallthrough();
  std::string t_encoder, t_decoder, t_loss;
  std::optional<std::size_t> t_epochs;
  std::optional<double> t_lr;
  train->add_option("--encoder", t_encoder, "Encoder variant")->check(CLI::IsMember(encoders));
  train->add_option("--decoder", t_decoder, "Decoder")->check(CLI::IsMember({"simconv", "resunet", "unfolding"}));
  train->add_option("--loss", t_loss, "Loss")->check(CLI::IsMember({"mae", "mse", "ergas"}));
  train->add_option("--epochs", t_epochs, "Epochs");
  train->add_option("--lr", t_lr, "Learning rate");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint")->fallthrough();
  std::string ev_ckpt;
  std::vector<std::string> ev_cubes;
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--cubes", ev_cubes, ".scube files; default is the validation set")->check(CLI::ExistingFile);

  auto* select = app.add_subcommand("select-response", "Rank candidate response curves")->fallthrough();
  std::vector<std::string> sel_responses;
  std::optional<std::size_t> sel_epochs;
  select->add_option("--responses", sel_responses, "Candidate response CSVs")->check(CLI::ExistingFile);
  select->add_option("--epochs", sel_epochs, "Epochs per candidate");

  auto* base = app.add_subcommand("baseline", "Evaluate the nearest-neighbour baseline")->fallthrough();
  std::vector<std::string> bl_cubes;
  std::string bl_response;
  base->add_option("--cubes", bl_cubes, ".scube files")->check(CLI::ExistingFile);
  base->add_option("--response", bl_response, "Response CSV")->check(CLI::ExistingFile);

  auto* viz = app.add_subcommand("export-viz", "Export masks, PSFs and responses")->fallthrough();
  std::string viz_ckpt;
  viz->add_option("--checkpoint", viz_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "uem: " << e.what() << "\n";
    return 1;
  }

  try {
    if (*synth) return cmd_synth(g, sh, sw, sbands, smooth, scount, out);
    if (*derive) return cmd_derive_psf(g, optics_path, heights_path, psf_window, out);
    if (*encode) return cmd_encode(g, variant, cube_path, response_path, noise_sigma, enc_ckpt, out);
    if (*train) {
      std::map<std::string, std::string> o;
      if (!t_encoder.empty()) o["encoder.variant"] = t_encoder;
      if (!t_decoder.empty()) o["decoder.variant"] = t_decoder;
      if (!t_loss.empty()) o["train.loss"] = t_loss;
      if (t_epochs) o["train.epochs"] = std::to_string(*t_epochs);
      if (t_lr) {
        std::ostringstream os;
        os.precision(17);
        os << *t_lr;
        o["train.learning_rate"] = os.str();
      }
      return cmd_train(g, o, out);
    }
    if (*eval) return cmd_eval(g, ev_ckpt, ev_cubes, out);
    if (*select) {
      std::map<std::string, std::string> o;
      if (sel_epochs) o["train.epochs"] = std::to_string(*sel_epochs);
      return cmd_select_response(g, sel_responses, o, out);
    }
    if (*base) return cmd_baseline(g, bl_cubes, bl_response, out);
    if (*viz) return cmd_export_viz(g, viz_ckpt, out);
  } catch (const UsageError& e) {
    err << "uem: " << e.what() << "\n";
    return 1;
  } catch (const config::ConfigError& e) {
    err << "uem: " << e.what() << "\n";
    return 1;
  } catch (const training::TrainingDiverged& e) {
    err << "uem: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "uem: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) {
  tune_allocator();
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace uem::cli
