#include "uemkit/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace uem::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

using Setter = std::function<void(const std::string& key, const std::string& value)>;

void apply_optics(std::map<std::string, Setter>& s, optics::OpticalSetup& o) {
  s["optics.grid_n"] = [&o](auto& k, auto& v) { o.grid_n = to_u64(k, v); };
  s["optics.pitch_um"] = [&o](auto& k, auto& v) { o.pitch_um = to_double(k, v); };
  s["optics.aperture_diameter_mm"] = [&o](auto& k, auto& v) { o.aperture_diameter_mm = to_double(k, v); };
  s["optics.delta_n"] = [&o](auto& k, auto& v) { o.delta_n = to_double(k, v); };
  s["optics.scene_distance_mm"] = [&o](auto& k, auto& v) { o.scene_distance_mm = to_double(k, v); };
  s["optics.propagation_z_mm"] = [&o](auto& k, auto& v) { o.propagation_z_mm = to_double(k, v); };
  s["optics.h_max_um"] = [&o](auto& k, auto& v) { o.h_max_um = to_double(k, v); };
  s["optics.radial_samples"] = [&o](auto& k, auto& v) { o.radial_samples = to_u64(k, v); };
  s["optics.psf_window"] = [&o](auto& k, auto& v) { o.psf_window = to_u64(k, v); };
  s["optics.downsample"] = [&o](auto& k, auto& v) { o.downsample = to_u64(k, v); };
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text,
                                                     const std::string& origin) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!section.empty()) key = section + "." + key;
    if (out.count(key)) throw ConfigError(where + ": duplicate key " + key);
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

std::vector<double> RunConfig::wavelengths() const {
  return uniform_wavelengths(data.bands, data.min_wavelength_nm, data.max_wavelength_nm);
}

RunConfig run_config_from(const std::map<std::string, std::string>& kv) {
  RunConfig rc;
  training::TrainConfig& t = rc.train;
  decoders::DecoderConfig& d = t.decoder;
  DataConfig& data = rc.data;
  std::map<std::string, Setter> s;

  s["encoder.variant"] = [&](auto& k, auto& v) {
    try {
      t.encoder = optics::parse_encoder_variant(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(k + ": " + e.what());
    }
  };
  s["encoder.psf_size"] = [&](auto& k, auto& v) { t.psf_size = to_u64(k, v); };
  s["encoder.unit_init"] = [&](auto& k, auto& v) { t.unit_init = to_bool(k, v); };
  s["encoder.response"] = [&](auto&, auto& v) { rc.response_path = v; };
  s["encoder.response_candidates"] = [&](auto&, auto& v) { rc.response_candidates = split_list(v); };

  s["decoder.variant"] = [&](auto& k, auto& v) {
    try {
      d.variant = decoders::parse_decoder_variant(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(k + ": " + e.what());
    }
  };
  s["decoder.kernel"] = [&](auto& k, auto& v) { d.kernel = to_u64(k, v); };
  s["decoder.hidden"] = [&](auto& k, auto& v) { d.hidden = to_u64(k, v); };
  s["decoder.depth"] = [&](auto& k, auto& v) { d.depth = to_u64(k, v); };
  s["decoder.unfold_depth"] = [&](auto& k, auto& v) { d.unfold_depth = to_u64(k, v); };
  s["decoder.base_width"] = [&](auto& k, auto& v) { d.base_width = to_u64(k, v); };
  s["decoder.max_width"] = [&](auto& k, auto& v) { d.max_width = to_u64(k, v); };
  s["decoder.unfold_iters"] = [&](auto& k, auto& v) { d.unfold_iters = to_u64(k, v); };
  s["decoder.alpha_init"] = [&](auto& k, auto& v) { d.alpha_init = to_double(k, v); };
  s["decoder.eta_init"] = [&](auto& k, auto& v) { d.eta_init = to_double(k, v); };

  s["train.loss"] = [&](auto& k, auto& v) {
    try {
      t.loss = training::parse_loss(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(k + ": " + e.what());
    }
  };
  s["train.learning_rate"] = [&](auto& k, auto& v) { t.learning_rate = to_double(k, v); };
  s["train.epochs"] = [&](auto& k, auto& v) { t.epochs = to_u64(k, v); };
  s["train.batch_size"] = [&](auto& k, auto& v) { t.batch_size = to_u64(k, v); };
  s["train.seed"] = [&](auto& k, auto& v) { t.seed = to_u64(k, v); };
  s["train.noise_sigma"] = [&](auto& k, auto& v) { t.noise_sigma = to_double(k, v); };
  s["train.patch_size"] = [&](auto& k, auto& v) { t.patch_size = to_u64(k, v); };
  s["train.patch_stride"] = [&](auto& k, auto& v) { t.patch_stride = to_u64(k, v); };
  s["train.frozen"] = [&](auto&, auto& v) { t.frozen = split_list(v); };
  s["train.positivity"] = [&](auto& k, auto& v) { t.positivity_projection = to_bool(k, v); };
  s["train.height_clamp"] = [&](auto& k, auto& v) { t.height_clamp = to_bool(k, v); };
  s["train.data"] = [&](auto&, auto& v) { data.train_sources = split_list(v); };
  s["train.val_data"] = [&](auto&, auto& v) { data.val_sources = split_list(v); };
  s["train.synth_train"] = [&](auto& k, auto& v) { data.synth_train = to_u64(k, v); };
  s["train.synth_val"] = [&](auto& k, auto& v) { data.synth_val = to_u64(k, v); };
  s["train.synth_size"] = [&](auto& k, auto& v) { data.synth_size = to_u64(k, v); };
  s["train.smoothness"] = [&](auto& k, auto& v) { data.smoothness = to_double(k, v); };

  apply_optics(s, t.optics);
  s["optics.bands"] = [&](auto& k, auto& v) { data.bands = to_u64(k, v); };
  s["optics.min_wavelength_nm"] = [&](auto& k, auto& v) { data.min_wavelength_nm = to_double(k, v); };
  s["optics.max_wavelength_nm"] = [&](auto& k, auto& v) { data.max_wavelength_nm = to_double(k, v); };

  for (const auto& [key, value] : kv) {
    auto it = s.find(key);
    if (it == s.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
  if (data.bands == 0) throw ConfigError("optics.bands must be >= 1");
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!rc.response_path.empty()) {
    t.fixed_response = load_response_csv(rc.response_path);
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from(read_key_values(path));
}

optics::OpticalSetup optics_from(const std::map<std::string, std::string>& kv) {
  optics::OpticalSetup o;
  std::map<std::string, Setter> s;
  apply_optics(s, o);
  for (const auto& [key, value] : kv) {
    auto it = s.find(key);
    if (it != s.end()) it->second(key, value);
  }
  return o;
}

std::vector<SpectralCube> synth_set(std::uint64_t seed, std::size_t count, std::size_t size,
                                    std::size_t bands, double smoothness, double min_nm,
                                    double max_nm) {
  std::vector<SpectralCube> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(synth_scene(seed + i, size, size, bands, smoothness, min_nm, max_nm));
  }
  return out;
}

std::pair<std::vector<SpectralCube>, std::vector<SpectralCube>> load_datasets(const RunConfig& cfg) {
  const DataConfig& d = cfg.data;
  const std::uint64_t seed = cfg.train.seed;
  auto load = [&](const std::vector<std::string>& sources, std::uint64_t base, std::size_t count) {
    std::vector<SpectralCube> cubes;
    if (sources.size() == 1 && sources.front() == "synth") {
      cubes = synth_set(base, count, d.synth_size, d.bands, d.smoothness, d.min_wavelength_nm,
                        d.max_wavelength_nm);
    } else {
      for (const auto& p : sources) {
        SpectralCube c = load_scube(p);
        c.wavelengths_nm = uniform_wavelengths(c.bands, d.min_wavelength_nm, d.max_wavelength_nm);
        cubes.push_back(std::move(c));
      }
    }
    if (cfg.train.patch_size > 0) {
      const std::size_t stride = cfg.train.patch_stride ? cfg.train.patch_stride : cfg.train.patch_size;
      std::vector<SpectralCube> patches;
      for (const auto& c : cubes) {
        auto p = crop_patches(c, cfg.train.patch_size, stride);
        patches.insert(patches.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
      }
      cubes = std::move(patches);
    }
    return cubes;
  };
  return {load(d.train_sources, seed, d.synth_train), load(d.val_sources, seed + 1'000'000, d.synth_val)};
}

}  // namespace uem::config
