#include <doctest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "uemkit/cli.hpp"
#include "uemkit/config.hpp"
#include "uemkit/image_io.hpp"
#include "uemkit/training.hpp"

using namespace uem;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result uem_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), {});
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

const char* kSmallConfig =
    "[train]\nepochs = 2\nbatch_size = 2\nsynth_train = 3\nsynth_val = 2\nsynth_size = 8\n"
    "[optics]\nbands = 4\n[decoder]\nhidden = 6\n";

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(uem_cli({}).code == 1);
  CHECK(uem_cli({"frobnicate"}).code == 1);
  CHECK(uem_cli({"synth", "--bogus", "1"}).code == 1);
  const Result r = uem_cli({"synth", "--h", "8"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--out") != std::string::npos);
  CHECK(uem_cli({"encode", "--cube", "/nonexistent.scube", "--out", "x"}).code == 1);
  CHECK(uem_cli({"train", "--encoder", "xem", "--out", "x"}).code == 1);
  CHECK(uem_cli({"--help"}).code == 0);
}

TEST_CASE("runtime errors exit with 2") {
  const auto dir = testing::scratch_dir("cli_err");
  write(dir / "bad.scube", "XXXXjunk");
  const Result r = uem_cli({"--out", (dir / "o").string(), "encode", "--cube", (dir / "bad.scube").string()});
  CHECK(r.code == 2);
  CHECK(!r.err.empty());

  write(dir / "cfg.ini", kSmallConfig);
  CHECK(uem_cli({"--config", (dir / "cfg.ini").string(), "--out", (dir / "t").string(), "train", "--lr", "1e200"})
            .code == 2);
}

TEST_CASE("synth is deterministic") {
  const auto dir = testing::scratch_dir("cli_synth");
  for (const char* name : {"a.scube", "b.scube"})
    REQUIRE(uem_cli({"synth", "--seed", "7", "--h", "16", "--w", "16", "--bands", "8", "--out", (dir / name).string()})
                .code == 0);
  CHECK(bytes(dir / "a.scube") == bytes(dir / "b.scube"));
  CHECK(load_scube(dir / "a.scube").values == synth_scene(7, 16, 16, 8, 2.0).values);

  REQUIRE(uem_cli({"--seed", "3", "--out", (dir / "set").string(), "synth", "--h", "4", "--w", "4", "--count", "3"}).code == 0);
  CHECK(load_scube(dir / "set" / "scene_2.scube").values == synth_scene(5, 4, 4, 8, 2.0).values);
}

TEST_CASE("encode matches the library and leaves inputs alone") {
  const auto dir = testing::scratch_dir("cli_encode");
  const SpectralCube cube = synth_scene(11, 8, 8, 4, 2.0);
  save_scube(cube, dir / "c.scube");
  const ResponseCurve resp = testing::random_response(4, 12, true);
  save_response_csv(resp, dir / "r.csv");
  const std::string before_cube = bytes(dir / "c.scube"), before_resp = bytes(dir / "r.csv");

  REQUIRE(uem_cli({"--out", (dir / "o").string(), "encode", "--variant", "wem-p", "--cube", (dir / "c.scube").string(),
               "--response", (dir / "r.csv").string()})
              .code == 0);
  // The CSV carries the response's own wavelengths only through the weights.
  ResponseCurve used = load_response_csv(dir / "r.csv");
  const SpectralCube loaded = load_scube(dir / "c.scube");
  const Tensor expect = optics::encode_wem(loaded.to_tensor(), used);
  CHECK(io::read_tensor_csv(dir / "o" / "rgb.csv") == expect);
  CHECK(fs::exists(dir / "o" / "rgb.png"));
  CHECK(bytes(dir / "c.scube") == before_cube);
  CHECK(bytes(dir / "r.csv") == before_resp);

  REQUIRE(uem_cli({"--seed", "4", "--out", (dir / "p").string(), "encode", "--variant", "pem-i", "--cube",
               (dir / "c.scube").string()})
              .code == 0);
  optics::EncoderInit init;
  init.height = 8;
  init.width = 8;
  init.wavelengths_nm = uniform_wavelengths(4);
  init.fixed_response = default_response(init.wavelengths_nm);
  const ParameterSet p = optics::init_encoder(optics::EncoderVariant::PemI, 4, init);
  CHECK(io::read_tensor_csv(dir / "p" / "rgb.csv") ==
        optics::encode(optics::EncoderVariant::PemI, loaded.to_tensor(), p, optics::OpticalSetup{}, init.wavelengths_nm));
}

TEST_CASE("train, eval and export-viz") {
  const auto dir = testing::scratch_dir("cli_train");
  write(dir / "cfg.ini", kSmallConfig);
  const std::string cfg = (dir / "cfg.ini").string();
  const std::string cfg_bytes = bytes(cfg);
  REQUIRE(uem_cli({"--config", cfg, "--out", (dir / "run").string(), "train", "--encoder", "wem-i"}).code == 0);
  CHECK(bytes(cfg) == cfg_bytes);
  for (const char* f : {"checkpoint.bin", "report.json", "loss.csv"}) CHECK(fs::exists(dir / "run" / f));

  // Same run through the library.
  config::RunConfig rc = config::load_run_config(cfg);
  rc.train.encoder = optics::EncoderVariant::WemI;
  const auto [train, val] = config::load_datasets(rc);
  const training::TrainReport lib = training::train_joint(rc.train, train, val);
  CHECK(bytes(dir / "run" / "loss.csv") == lib.loss_csv());
  const auto [params, meta] = load_checkpoint(dir / "run" / "checkpoint.bin");
  CHECK(params == lib.final_params);

  const Result ev = uem_cli({"eval", "--checkpoint", (dir / "run" / "checkpoint.bin").string()});
  REQUIRE(ev.code == 0);
  const auto rows = csv_rows(ev.out);
  REQUIRE(rows.size() == 1 + 2 + 1);
  CHECK(rows.back()[0] == "mean");
  const auto per = training::evaluate_each(rc.train, lib.final_params, val);
  for (std::size_t i = 0; i < 2; ++i) CHECK(rows[i + 1][1] == csv_rows(per[i].csv_row())[0][0]);
  for (std::size_t k = 1; k <= 4; ++k) {
    const double mean = (std::stod(rows[1][k]) + std::stod(rows[2][k])) / 2.0;
    CHECK(std::stod(rows[3][k]) == doctest::Approx(mean).epsilon(1e-15));
  }

  REQUIRE(uem_cli({"--out", (dir / "viz").string(), "export-viz", "--checkpoint", (dir / "run" / "checkpoint.bin").string()})
              .code == 0);
  const ResponseCurve exported = load_response_csv(dir / "viz" / "response.csv");
  CHECK(max_abs_diff(exported.weights,
                     optics::response_from_band_weights(params.get(optics::kResponse), val[0].wavelengths_nm)) <= 1e-15);
}

TEST_CASE("derive-psf matches the library") {
  const auto dir = testing::scratch_dir("cli_psf");
  write(dir / "optics.ini", "[optics]\ngrid_n = 32\naperture_diameter_mm = 0.1\nbands = 3\n");
  std::string h = "height_um\n";
  for (int i = 0; i < 6; ++i) h += std::to_string(0.1 * i) + "\n";
  write(dir / "h.csv", h);
  REQUIRE(uem_cli({"--out", (dir / "o").string(), "derive-psf", "--optics", (dir / "optics.ini").string(), "--heights",
               (dir / "h.csv").string(), "--psf-window", "5"})
              .code == 0);
  optics::OpticalSetup s;
  s.grid_n = 32;
  s.aperture_diameter_mm = 0.1;
  s.psf_window = 5;
  s.radial_samples = 6;
  const Tensor profile = io::read_column_csv(dir / "h.csv");
  const Tensor psf = optics::height_to_psf(optics::radial_to_2d(profile, s), s, uniform_wavelengths(3));
  CHECK(io::read_tensor_csv(dir / "o" / "psf.csv") == psf);
  CHECK(fs::exists(dir / "o" / "psf_0.png"));
  CHECK(uem_cli({"--out", (dir / "o").string(), "derive-psf", "--optics", (dir / "optics.ini").string(), "--heights",
             (dir / "h.csv").string(), "--psf-window", "4"})
            .code == 1);
}

TEST_CASE("baseline and select-response") {
  const auto dir = testing::scratch_dir("cli_sel");
  write(dir / "cfg.ini", kSmallConfig);
  const SpectralCube cube = synth_scene(21, 8, 8, 4, 2.0);
  save_scube(cube, dir / "c.scube");
  const Result b = uem_cli({"--config", (dir / "cfg.ini").string(), "baseline", "--cubes", (dir / "c.scube").string()});
  REQUIRE(b.code == 0);
  const SpectralCube loaded = load_scube(dir / "c.scube");
  const ResponseCurve r = default_response(loaded.wavelengths_nm);
  const Tensor gt = loaded.to_tensor();
  const auto m = metrics::evaluate(metrics::nn_baseline(optics::encode_wem(gt, r), r), gt);
  CHECK(csv_rows(b.out)[1][1] == csv_rows(m.csv_row())[0][0]);

  ResponseCurve zero = r;
  zero.weights = Tensor(r.weights.shape());
  save_response_csv(r, dir / "rgb.csv");
  save_response_csv(zero, dir / "zero.csv");
  const Result s = uem_cli({"--config", (dir / "cfg.ini").string(), "select-response", "--responses",
                        (dir / "zero.csv").string(), (dir / "rgb.csv").string(), "--epochs", "30"});
  REQUIRE(s.code == 0);
  const auto rows = csv_rows(s.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1][1] == "rgb");
  CHECK(rows[2][1] == "zero");
}
