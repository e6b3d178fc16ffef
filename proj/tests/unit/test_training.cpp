#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "uemkit/config.hpp"
#include "uemkit/training.hpp"

using namespace uem;
using namespace uem::training;
using optics::EncoderVariant;
using testing::uniform;

namespace {

std::vector<SpectralCube> synth(std::uint64_t seed, std::size_t n, std::size_t size, std::size_t bands) {
  return config::synth_set(seed, n, size, bands, 2.0, kDefaultMinWavelengthNm, kDefaultMaxWavelengthNm);
}

optics::OpticalSetup small_setup() {
  optics::OpticalSetup s;
  s.grid_n = 32;
  s.pitch_um = 4.0;
  s.aperture_diameter_mm = 32 * 4.0 / 1000.0 * 0.8;
  s.radial_samples = 8;
  s.psf_window = 5;
  s.downsample = 4;
  return s;
}

TrainConfig small_config(EncoderVariant v, std::size_t epochs = 2) {
  TrainConfig c;
  c.encoder = v;
  c.decoder.hidden = 6;
  c.epochs = epochs;
  c.batch_size = 2;
  c.seed = 3;
  c.psf_size = 3;
  c.optics = small_setup();
  return c;
}

double loop_mae(const Tensor& p, const Tensor& g) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - g[i]);
  return s / p.size();
}

Tensor offset(const Tensor& t, double d) {
  Tensor out = t;
  for (double& v : out.data()) v += d;
  return out;
}

}  // namespace

TEST_CASE("losses") {
  const Tensor g = uniform(Shape{2, 3, 3}, 1, 0.1, 1);
  for (LossKind k : {LossKind::Mae, LossKind::Mse, LossKind::Ergas}) CHECK(loss_value(k, g, g) == 0.0);
  CHECK(loss_value(LossKind::Mae, offset(g, 0.1), g) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(loss_value(LossKind::Mse, offset(g, 0.1), g) == doctest::Approx(0.01).epsilon(1e-12));
  const Tensor p = uniform(Shape{2, 3, 3}, 2, 0.1, 1);
  CHECK(std::abs(loss_value(LossKind::Mae, p, g) - loop_mae(p, g)) <= 1e-15);
  CHECK(std::abs(loss_value(LossKind::Ergas, p, g) - metrics::ergas(p, g)) <= 1e-12);
  Tensor gz = g;
  for (std::size_t i = 0; i < 9; ++i) gz[i] = 0.0;
  CHECK(std::abs(loss_value(LossKind::Ergas, p, gz) - metrics::ergas(p, gz)) <= 1e-12);
  CHECK_THROWS_AS(loss_value(LossKind::Mae, p, uniform(Shape{2, 3, 4}, 3)), ShapeError);
  CHECK(parse_loss("ergas") == LossKind::Ergas);
  CHECK_THROWS(parse_loss("l1"));

  ad::GraphFn f = [&](ad::Tape& t, std::span<const ad::Var> v) { return loss_ergas(v[0], g); };
  CHECK(ad::grad_check(f, std::vector<Tensor>{p}, 1e-6)[0] <= 1e-5);
}

TEST_CASE("adam step") {
  ParameterSet p;
  p.set("decoder.a", uniform(Shape{4}, 4));
  p.set("encoder.response", uniform(Shape{3, 2}, 5));
  const ParameterSet before = p;
  AdamState st;
  adam_step(p, {{"decoder.a", Tensor(Shape{4})}}, st, 1e-3);
  CHECK(p == before);

  AdamState st2;
  const Tensor g = uniform(Shape{4}, 6);
  adam_step(p, {{"decoder.a", g}}, st2, 1e-3);
  for (std::size_t i = 0; i < 4; ++i) {
    const double d = before.get("decoder.a")[i] - p.get("decoder.a")[i];
    CHECK(std::abs(std::abs(d) - 1e-3) <= 1e-8);
    CHECK(d * g[i] > 0);
  }
  CHECK(p.get("encoder.response") == before.get("encoder.response"));

  Projection proj;
  proj.nonnegative_response = true;
  proj.height_max = 1.2;
  ParameterSet q;
  q.set(optics::kResponse, Tensor(Shape{3, 1}, std::vector<double>{0.0, 1e-4, 2.0}));
  q.set(optics::kHeights, Tensor(Shape{3}, std::vector<double>{0.0, 0.6, 1.2}));
  AdamState st3;
  adam_step(q,
            {{optics::kResponse, Tensor(Shape{3, 1}, 1.0)},
             {optics::kHeights, Tensor(Shape{3}, std::vector<double>{1.0, 1.0, -1.0})}},
            st3, 1e-2, proj);
  for (double v : q.get(optics::kResponse).data()) CHECK(v >= 0.0);
  CHECK(q.get(optics::kResponse)[0] == 0.0);
  CHECK(q.get(optics::kHeights)[0] == 0.0);
  CHECK(q.get(optics::kHeights)[2] == 1.2);
  CHECK(q.get(optics::kHeights)[1] == doctest::Approx(0.59));
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS(c.validate());
  c = TrainConfig{};
  c.learning_rate = -1;
  CHECK_THROWS(c.validate());
  CHECK_THROWS_AS(config::run_config_from({{"train.epochz", "3"}}), config::ConfigError);
  CHECK_THROWS_AS(config::run_config_from({{"train.epochs", "three"}}), config::ConfigError);
  const auto kv = config::parse_key_values("# comment\n[train]\nepochs = 7\nloss = mse\n[optics]\ngrid_n = 64\n");
  const auto rc = config::run_config_from(kv);
  CHECK(rc.train.epochs == 7);
  CHECK(rc.train.loss == LossKind::Mse);
  CHECK(rc.train.optics.grid_n == 64);
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
  const auto train = synth(0, 3, 8, 4), val = synth(100, 2, 8, 4);
  for (EncoderVariant v : {EncoderVariant::WemI, EncoderVariant::PemI}) {
    TrainConfig c = small_config(v, 1);
    c.learning_rate = 0.0;
    const ParameterSet init = init_parameters(c, 8, 8, train[0].wavelengths_nm);
    const TrainReport r = train_joint(c, train, val);
    CHECK(r.final_params == init);
    CHECK(r.train_loss.size() == 1);
    CHECK(r.val_metrics.size() == 1);
    CHECK(std::isfinite(r.train_loss[0]));
    CHECK(!r.config.is_null());
  }
  TrainConfig c = small_config(EncoderVariant::UemI, 1);
  c.learning_rate = 0.0;
  CHECK(train_full_uem(c, train, val).final_params == init_parameters(c, 8, 8, train[0].wavelengths_nm));
}

TEST_CASE("training is deterministic") {
  const auto train = synth(1, 4, 8, 4), val = synth(101, 2, 8, 4);
  TrainConfig c = small_config(EncoderVariant::AemP, 3);
  c.noise_sigma = 0.01;
  const TrainReport a = train_joint(c, train, val);
  const TrainReport b = train_joint(c, train, val);
  CHECK(a.same_numbers(b));
  c.seed = 4;
  CHECK(!a.same_numbers(train_joint(c, train, val)));
}

TEST_CASE("only the cast's parameters move") {
  const auto train = synth(2, 3, 8, 4), val = synth(102, 1, 8, 4);
  for (EncoderVariant v : optics::all_encoder_variants()) {
    TrainConfig c = small_config(v, 2);
    const ParameterSet init = init_parameters(c, 8, 8, train[0].wavelengths_nm);
    const TrainReport r = v == EncoderVariant::UemI ? train_full_uem(c, train, val) : train_joint(c, train, val);
    const auto own = optics::trainable_encoder_params(v);
    for (const auto& [name, t] : init.items()) {
      const bool learns = name.rfind(decoders::kPrefix, 0) == 0 ||
                          std::find(own.begin(), own.end(), name) != own.end();
      if (learns) {
        CHECK_MESSAGE(r.final_params.get(name) != t, optics::to_string(v) << " " << name);
      } else {
        CHECK_MESSAGE(r.final_params.get(name) == t, optics::to_string(v) << " " << name);
      }
    }
    if (v == EncoderVariant::WemIPc)
      for (double w : r.final_params.get(optics::kResponse).data()) CHECK(w >= 0.0);
    if (v == EncoderVariant::PemP)
      for (double h : r.final_params.get(optics::kHeights).data()) {
        CHECK(h >= 0.0);
        CHECK(h <= c.optics.h_max_um);
      }
  }
}

TEST_CASE("frozen parameters stay fixed") {
  const auto train = synth(3, 2, 8, 4), val = synth(103, 1, 8, 4);
  TrainConfig c = small_config(EncoderVariant::WemI, 2);
  c.frozen = {"decoder.conv0", optics::kResponse};
  const ParameterSet init = init_parameters(c, 8, 8, train[0].wavelengths_nm);
  const TrainReport r = train_joint(c, train, val);
  CHECK(r.final_params.get("decoder.conv0.weight") == init.get("decoder.conv0.weight"));
  CHECK(r.final_params.get(optics::kResponse) == init.get(optics::kResponse));
  CHECK(r.final_params.get("decoder.conv1.weight") != init.get("decoder.conv1.weight"));
}

TEST_CASE("training loss falls in most smoke runs") {
  std::size_t falling = 0;
  const std::size_t runs = 10;
  for (std::uint64_t s = 0; s < runs; ++s) {
    const auto train = synth(10 * s, 4, 8, 4), val = synth(1000 + s, 1, 8, 4);
    TrainConfig c = small_config(EncoderVariant::WemP, 8);
    c.batch_size = 0;
    c.seed = s;
    const TrainReport r = train_joint(c, train, val);
    bool ok = true;
    for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
      ok = ok && std::isfinite(r.train_loss[e]);
      if (e > 0) ok = ok && r.train_loss[e] <= r.train_loss[e - 1];
    }
    falling += ok;
  }
  CHECK(falling >= 8);
}

TEST_CASE("bad inputs") {
  const auto train = synth(4, 2, 8, 4), val = synth(104, 1, 8, 5);
  CHECK_THROWS(train_joint(small_config(EncoderVariant::WemI), train, val));
  CHECK_THROWS(train_joint(small_config(EncoderVariant::WemI), {}, train));
  TrainConfig c = small_config(EncoderVariant::WemI);
  c.learning_rate = 1e200;
  CHECK_THROWS_AS(train_joint(c, train, synth(105, 1, 8, 4)), TrainingDiverged);
}

TEST_CASE("response selection") {
  const auto train = synth(5, 3, 8, 4), val = synth(105, 2, 8, 4);
  TrainConfig c = small_config(EncoderVariant::WemP, 5);
  const ResponseCurve rgb = default_response(train[0].wavelengths_nm);
  ResponseCurve zero = rgb;
  zero.weights = Tensor(rgb.weights.shape());

  const SelectionResult one = select_response({rgb}, {"rgb"}, c, train, val);
  CHECK(one.best == 0);
  CHECK(one.ranked.size() == 1);

  const SelectionResult two = select_response({zero, rgb}, {"zero", "rgb"}, c, train, val);
  CHECK(two.best == 1);
  CHECK(two.ranked.front().name == "rgb");
  CHECK(two.ranked.front().val.psnr_db > two.ranked.back().val.psnr_db);
  const SelectionResult again = select_response({zero, rgb}, {"zero", "rgb"}, c, train, val);
  CHECK(again.best == two.best);
  CHECK(again.ranked.front().train_loss == two.ranked.front().train_loss);
  CHECK_THROWS(select_response({}, {}, c, train, val));
}

TEST_CASE("UEM-I from unit terms starts where WEM-I does") {
  const auto train = synth(6, 3, 8, 4), val = synth(106, 1, 8, 4);
  TrainConfig u = small_config(EncoderVariant::UemI, 1);
  u.unit_init = true;
  u.frozen = {optics::kMask, optics::kPsf};
  TrainConfig w = small_config(EncoderVariant::WemI, 1);
  const TrainReport ru = train_full_uem(u, train, val);
  const TrainReport rw = train_joint(w, train, val);
  CHECK(std::abs(ru.train_loss[0] - rw.train_loss[0]) <= 1e-12 * std::abs(rw.train_loss[0]));
  CHECK(ru.final_params.get(optics::kResponse) == rw.final_params.get(optics::kResponse));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testing::scratch_dir("ckpt");
  TrainConfig c = small_config(EncoderVariant::PemI);
  const ParameterSet p = init_parameters(c, 8, 8, uniform_wavelengths(4));
  save_checkpoint(dir / "a.ckpt", p, c.to_json());
  const auto [q, meta] = load_checkpoint(dir / "a.ckpt");
  CHECK(q == p);
  CHECK(meta == c.to_json());
}

TEST_CASE("WEM-I beats the nearest-neighbour baseline") {
  const auto train = synth(0, 20, 32, 8), val = synth(1'000'000, 5, 32, 8);
  TrainConfig c;
  c.encoder = EncoderVariant::WemI;
  c.epochs = 200;
  c.batch_size = 4;
  const TrainReport r = train_joint(c, train, val);
  const double base = baseline_metrics(c, val).psnr_db;
  MESSAGE("WEM-I " << r.final_val().psnr_db << " dB, baseline " << base << " dB");
  CHECK(r.final_val().psnr_db > base);
}

TEST_CASE("full UEM-I is within 1 dB of the single ideal casts") {
  const auto train = synth(7, 8, 16, 4), val = synth(107, 4, 16, 4);
  auto cfg = [](EncoderVariant v) {
    TrainConfig c;
    c.encoder = v;
    c.epochs = 60;
    c.batch_size = 4;
    c.seed = 1;
    c.psf_size = 3;
    return c;
  };
  const double uem = train_full_uem(cfg(EncoderVariant::UemI), train, val).final_val().psnr_db;
  for (EncoderVariant v : {EncoderVariant::AemI, EncoderVariant::PemI, EncoderVariant::WemI}) {
    const double single = train_joint(cfg(v), train, val).final_val().psnr_db;
    MESSAGE(optics::to_string(v) << " " << single << " dB, UEM-I " << uem << " dB");
    CHECK(uem >= single - 1.0);
  }
}
