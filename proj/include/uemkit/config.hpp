#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "uemkit/spectral_data.hpp"
#include "uemkit/training.hpp"

namespace uem::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// `key = value` lines; `#` starts a comment. A `[section]` line prefixes the
/// following keys with `section.`.
std::map<std::string, std::string> parse_key_values(const std::string& text,
                                                     const std::string& origin = "<config>");
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Where training and validation cubes come from.
struct DataConfig {
  /// "synth" or a list of .scube paths.
  std::vector<std::string> train_sources{"synth"};
  std::vector<std::string> val_sources{"synth"};
  std::size_t synth_train = 40;
  std::size_t synth_val = 10;
  std::size_t synth_size = 32;
  double smoothness = 2.0;
  std::size_t bands = 8;
  double min_wavelength_nm = kDefaultMinWavelengthNm;
  double max_wavelength_nm = kDefaultMaxWavelengthNm;
};

struct RunConfig {
  training::TrainConfig train;
  DataConfig data;
  /// encoder.response: CSV path of the fixed response, empty for the default.
  std::string response_path;
  /// encoder.response_candidates for select-response.
  std::vector<std::string> response_candidates;

  std::vector<double> wavelengths() const;
};

/// Unknown keys and malformed values raise ConfigError naming the key.
RunConfig run_config_from(const std::map<std::string, std::string>& kv);
RunConfig load_run_config(const std::filesystem::path& path);
/// Only the optics.* keys; other sections are ignored.
optics::OpticalSetup optics_from(const std::map<std::string, std::string>& kv);

/// Training and validation cubes: synthetic scenes (train seeds base..,
/// validation seeds offset by 1'000'000) or loaded files, patched when
/// train.patch_size is set.
std::pair<std::vector<SpectralCube>, std::vector<SpectralCube>> load_datasets(const RunConfig& cfg);

std::vector<SpectralCube> synth_set(std::uint64_t seed, std::size_t count, std::size_t size,
                                    std::size_t bands, double smoothness, double min_nm,
                                    double max_nm);

}  // namespace uem::config
