#include <doctest.h>

#include <Eigen/Dense>

#include "test_util.hpp"
#include "uemkit/decoders.hpp"

using namespace uem;
using namespace uem::decoders;
using testing::random_response;
using testing::uniform;

namespace {

optics::EncodingOperator make_op(ad::Tape& t, const ResponseCurve& r) {
  optics::EncodingOperator op;
  op.response = t.constant(r.weights);
  op.quad = quadrature_weights(r.wavelengths_nm);
  return op;
}

ParameterSet scaled(ParameterSet p, double s) {
  for (auto& [name, t] : p.items()) t *= s;
  return p;
}

// Response on a 1 nm grid, so the quadrature weight is 1.
ResponseCurve unit_step_response(std::size_t bands, std::uint64_t seed) {
  ResponseCurve r = random_response(bands, seed, true);
  r.wavelengths_nm.clear();
  for (std::size_t l = 0; l < bands; ++l) r.wavelengths_nm.push_back(500.0 + l);
  return r;
}

}  // namespace

TEST_CASE("decoder variant names") {
  CHECK(parse_decoder_variant("simconv") == DecoderVariant::SimConv);
  CHECK(parse_decoder_variant("Res-U-Net") == DecoderVariant::ResUNet);
  CHECK(parse_decoder_variant("unfolding") == DecoderVariant::Unfolding);
  CHECK_THROWS(parse_decoder_variant("mst"));
  DecoderConfig cfg;
  cfg.kernel = 4;
  CHECK_THROWS(cfg.validate());
  cfg = DecoderConfig{};
  cfg.unfold_iters = 0;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("Sim-Conv-Net") {
  DecoderConfig cfg;
  const ParameterSet p = init_sim_conv(cfg, 3, 5, 1);
  CHECK(p.get("decoder.conv0.weight").shape() == Shape{31, 3, 3, 3});
  CHECK(p.get("decoder.conv3.weight").shape() == Shape{5, 31, 3, 3});
  CHECK(p.get("decoder.conv3.bias").shape() == Shape{5});
  const Tensor rgb = uniform(Shape{3, 7, 9}, 2);
  const Tensor out = sim_conv_forward(rgb, p);
  CHECK(out.shape() == Shape{5, 7, 9});
  CHECK(sim_conv_forward(rgb, p) == out);
  CHECK(all_finite(out));

  const Tensor zero = sim_conv_forward(rgb, scaled(p, 0.0));
  for (double v : zero.data()) CHECK(v == 0.0);

  // ReLU between layers, linear output: negative outputs are possible.
  double lo = 0;
  for (double v : out.data()) lo = std::min(lo, v);
  CHECK(lo < 0.0);
}

TEST_CASE("Sim-Conv-Net gradients") {
  DecoderConfig cfg;
  cfg.hidden = 6;
  const ParameterSet p = init_sim_conv(cfg, 3, 4, 3);
  const Tensor rgb = uniform(Shape{3, 6, 6}, 4);
  const Tensor gt = uniform(Shape{4, 6, 6}, 5);
  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (const auto& [n, t] : p.items()) {
    names.push_back(n);
    inputs.push_back(t);
  }
  ad::GraphFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
    std::vector<std::pair<std::string, ad::Var>> vars;
    for (std::size_t i = 0; i < names.size(); ++i) vars.emplace_back(names[i], v[i]);
    return ad::sum(ad::square(ad::sub(sim_conv_forward(t.constant(rgb), BoundParams(t, vars)), t.constant(gt))));
  };
  const auto errs = ad::grad_check(f, inputs, 1e-6, 10, 1);
  for (std::size_t i = 0; i < errs.size(); ++i) CHECK_MESSAGE(errs[i] <= 1e-4, names[i]);
}

TEST_CASE("Res-U-Net shapes and structure") {
  const ParameterSet p = init_res_unet("net", 3, 3, 5, 4, 16, 7);
  const Tensor x = uniform(Shape{3, 8, 12}, 8);
  CHECK(res_unet_forward(x, p, "net", 3).shape() == Shape{5, 8, 12});
  CHECK_THROWS_AS(res_unet_forward(uniform(Shape{3, 6, 8}, 1), p, "net", 3), ShapeError);
  try {
    check_unet_size(4, 12, 16);
    FAIL("expected an error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("8") != std::string::npos);
  }
  CHECK_NOTHROW(check_unet_size(1, 5, 7));

  const ParameterSet d1 = init_res_unet("net", 1, 3, 4, 4, 16, 9);
  CHECK(res_unet_forward(uniform(Shape{3, 5, 7}, 10), d1, "net", 1).shape() == Shape{4, 5, 7});
  for (const auto& [name, t] : d1.items()) {
    CHECK(name.find("down") == std::string::npos);
    CHECK(name.find("up") == std::string::npos);
  }

  // Zeroed residual projection leaves only the identity skip path.
  const ParameterSet z = init_res_unet("net", 3, 4, 4, 4, 16, 11, true);
  const Tensor y = uniform(Shape{4, 8, 8}, 12);
  CHECK(res_unet_forward(y, z, "net", 3) == y);
}

TEST_CASE("Res-U-Net gradients at depth 2") {
  const ParameterSet p = init_res_unet("net", 2, 3, 4, 3, 8, 13);
  const Tensor x = uniform(Shape{3, 8, 8}, 14);
  const Tensor gt = uniform(Shape{4, 8, 8}, 15);
  std::vector<std::string> names;
  std::vector<Tensor> inputs{x};
  for (const auto& [n, t] : p.items()) {
    names.push_back(n);
    inputs.push_back(t);
  }
  ad::GraphFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
    std::vector<std::pair<std::string, ad::Var>> vars;
    for (std::size_t i = 0; i < names.size(); ++i) vars.emplace_back(names[i], v[i + 1]);
    return ad::sum(ad::square(ad::sub(res_unet_forward(v[0], BoundParams(t, vars), "net", 2), t.constant(gt))));
  };
  const auto errs = ad::grad_check(f, inputs, 1e-6, 6, 2);
  CHECK(errs[0] <= 1e-4);
  for (std::size_t i = 0; i < names.size(); ++i) CHECK_MESSAGE(errs[i + 1] <= 1e-4, names[i]);
}

TEST_CASE("nearest channel baseline") {
  ResponseCurve id;
  id.wavelengths_nm = uniform_wavelengths(3);
  id.weights = Tensor(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i) id.weights[i * 3 + i] = 1.0;
  const Tensor rgb = uniform(Shape{3, 4, 4}, 16);
  CHECK(unfold_init(rgb, id) == rgb);

  ResponseCurve r = random_response(6, 17);
  for (std::size_t l = 0; l < 6; ++l) r.weights[l] = 5.0;
  const Tensor all_r = unfold_init(rgb, r);
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t i = 0; i < 16; ++i) CHECK(all_r[l * 16 + i] == rgb[i]);

  const ResponseCurve rr = random_response(9, 18);
  const auto idx = nearest_channel(rr.weights);
  for (std::size_t l = 0; l < 9; ++l) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 3; ++c)
      if (rr.weights[c * 9 + l] > rr.weights[best * 9 + l]) best = c;
    CHECK(idx[l] == best);
  }
  Tensor tie(Shape{3, 2}, 1.0);
  CHECK(nearest_channel(tie) == std::vector<std::size_t>{0, 0});
  CHECK(unfold_init(rgb, rr) == unfold_init(rgb, rr));
  CHECK(unfold_init(rgb, rr).shape() == Shape{9, 4, 4});
}

TEST_CASE("measurement operator adjoints") {
  const std::size_t L = 4;
  const ResponseCurve r = random_response(L, 19);
  const Tensor x = uniform(Shape{L, 6, 6}, 20), y = uniform(Shape{3, 6, 6}, 21);
  ad::Tape t;
  std::vector<optics::EncodingOperator> ops(4, make_op(t, r));
  ops[1].mask = t.constant(uniform(Shape{L, 6, 6}, 22, 0, 1));
  ops[2].mask = ad::broadcast_channels(optics::binarize_mask(t.constant(uniform(Shape{6, 6}, 23))), L);
  ops[2].shear = true;
  ops[3].psf = t.constant(uniform(Shape{L, 3, 3}, 24));
  for (const auto& op : ops) {
    const double lhs = dot(op.forward(t.constant(x)).value(), y);
    const double rhs = dot(x, op.adjoint(t.constant(y)).value());
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("model steps") {
  const ResponseCurve r = random_response(3, 25);
  const Tensor i0 = uniform(Shape{3, 4, 4}, 26, 0, 1);
  const Tensor rgb = optics::encode_wem(i0, r);
  CHECK(max_abs_diff(model_step_wem(i0, i0, rgb, r, 0.1, 0.1), i0) <= 1e-15);

  const Tensor z = uniform(Shape{3, 4, 4}, 27, 0, 1);
  const Tensor noisy = uniform(Shape{3, 4, 4}, 28);
  const Tensor mask = uniform(Shape{3, 4, 4}, 29, 0, 1);
  const Tensor logits = uniform(Shape{4, 4}, 30);
  const Tensor psf = uniform(Shape{3, 3, 3}, 31, 0, 0.3);
  CHECK(model_step_aem(noisy, z, rgb, Tensor(Shape{3, 4, 4}, 1.0), false, r, 1e-3, 0.5) ==
        model_step_wem(noisy, z, rgb, r, 1e-3, 0.5));
  CHECK(max_abs_diff(model_step_pem(noisy, z, rgb, optics::delta_psf(3, 3), r, 1e-3, 0.5),
                     model_step_wem(noisy, z, rgb, r, 1e-3, 0.5)) <= 1e-15);

  ad::Tape t;
  auto op_w = make_op(t, r);
  auto op_a = op_w;
  op_a.mask = t.constant(mask);
  auto op_p = op_w;
  op_p.psf = t.constant(psf);
  auto op_s = op_w;
  op_s.mask = ad::broadcast_channels(optics::binarize_mask(t.constant(logits)), 3);
  op_s.shear = true;
  const double eta = 0.5;
  const double alpha = 1e-5;  // the Delta-lambda scaling makes O^T O large
  CHECK(hqs_objective(op_w, model_step_wem(noisy, z, rgb, r, alpha, eta), z, rgb, eta) <
        hqs_objective(op_w, noisy, z, rgb, eta));
  CHECK(hqs_objective(op_a, model_step_aem(noisy, z, rgb, mask, false, r, alpha, eta), z, rgb, eta) <
        hqs_objective(op_a, noisy, z, rgb, eta));
  CHECK(hqs_objective(op_s, model_step_aem(noisy, z, rgb, logits, true, r, alpha, eta), z, rgb, eta) <
        hqs_objective(op_s, noisy, z, rgb, eta));
  CHECK(hqs_objective(op_p, model_step_pem(noisy, z, rgb, psf, r, alpha, eta), z, rgb, eta) <
        hqs_objective(op_p, noisy, z, rgb, eta));
  CHECK_THROWS(model_step_wem(noisy, z, rgb, r, 0.0, eta));
}

TEST_CASE("single steps decrease the objective at alpha = 1e-3") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ResponseCurve r = unit_step_response(3, 100 + s);
    const Tensor i = uniform(Shape{3, 4, 4}, 200 + s), z = uniform(Shape{3, 4, 4}, 300 + s);
    const Tensor rgb = uniform(Shape{3, 4, 4}, 400 + s);
    ad::Tape t;
    auto op = make_op(t, r);
    const double eta = 0.01;
    CHECK(hqs_objective(op, model_step_wem(i, z, rgb, r, 1e-3, eta), z, rgb, eta) < hqs_objective(op, i, z, rgb, eta));
    auto op_p = op;
    const Tensor psf = uniform(Shape{3, 3, 3}, 500 + s, 0, 0.3);
    op_p.psf = t.constant(psf);
    CHECK(hqs_objective(op_p, model_step_pem(i, z, rgb, psf, r, 1e-3, eta), z, rgb, eta) <
          hqs_objective(op_p, i, z, rgb, eta));
  }
}

TEST_CASE("pure model steps converge to the dense minimiser") {
  const ResponseCurve r = unit_step_response(2, 40);
  const Tensor z = uniform(Shape{2, 2, 2}, 41, 0, 1);
  const Tensor rgb = uniform(Shape{3, 2, 2}, 42, 0, 1);
  const double eta = 1.0, alpha = 0.05;
  // Dense D: rgb[c,p] = sum_l W[c,l] I[l,p].
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(12, 8);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t p = 0; p < 4; ++p) D(c * 4 + p, l * 4 + p) = r.weights[c * 2 + l];
  Eigen::VectorXd zv(8), b(12);
  for (int i = 0; i < 8; ++i) zv(i) = z[i];
  for (int i = 0; i < 12; ++i) b(i) = rgb[i];
  const Eigen::MatrixXd A = D.transpose() * D + eta * Eigen::MatrixXd::Identity(8, 8);
  const Eigen::VectorXd star = A.ldlt().solve(D.transpose() * b + eta * zv);

  Tensor it(Shape{2, 2, 2});
  double prev = 1e300;
  ad::Tape t;
  auto op = make_op(t, r);
  for (int k = 0; k < 200; ++k) {
    it = model_step_wem(it, z, rgb, r, alpha, eta);
    const double obj = hqs_objective(op, it, z, rgb, eta);
    CHECK(obj <= prev + 1e-15);
    prev = obj;
  }
  double err = 0;
  for (int i = 0; i < 8; ++i) err = std::max(err, std::abs(it[i] - star(i)));
  CHECK(err <= 1e-4);
}

TEST_CASE("unfolding network") {
  DecoderConfig cfg;
  cfg.variant = DecoderVariant::Unfolding;
  cfg.unfold_iters = 1;
  cfg.unfold_depth = 2;
  cfg.base_width = 4;
  const std::size_t L = 4;
  const ResponseCurve r = unit_step_response(L, 50);
  const Tensor rgb = uniform(Shape{3, 8, 8}, 51, 0, 1);
  const ParameterSet p = init_unfolding(cfg, L, 52);
  CHECK(p.get("decoder.stage0.alpha_raw").shape() == Shape{1});

  ad::Tape t;
  BoundParams b(t, p, {});
  auto op = make_op(t, r);
  const Tensor out = unfolding_forward(t.constant(rgb), op, b, cfg).value();
  const Tensor z0 = unfold_init(rgb, r);
  const Tensor i1 = model_step_wem(z0, z0, rgb, r, 0.01, 0.01);
  CHECK(max_abs_diff(out, res_unet_forward(i1, p, "decoder.stage0.unet", 2)) <= 1e-12);

  cfg.unfold_iters = 3;
  const ParameterSet pz = init_unfolding(cfg, L, 53, true);
  BoundParams bz(t, pz, {});
  const Tensor outz = unfolding_forward(t.constant(rgb), op, bz, cfg).value();
  Tensor zi = z0, ii = z0;
  for (int k = 0; k < 3; ++k) {
    ii = model_step_wem(ii, zi, rgb, r, 0.01, 0.01);
    zi = ii;
  }
  CHECK(max_abs_diff(outz, zi) <= 1e-12);
  CHECK(outz.shape() == Shape{L, 8, 8});
}

TEST_CASE("unfolding gradients reach alpha and the prior") {
  DecoderConfig cfg;
  cfg.variant = DecoderVariant::Unfolding;
  cfg.unfold_iters = 2;
  cfg.unfold_depth = 2;
  cfg.base_width = 3;
  const std::size_t L = 4;
  const ResponseCurve r = unit_step_response(L, 60);
  const Tensor rgb = uniform(Shape{3, 8, 8}, 61, 0, 1);
  const Tensor gt = uniform(Shape{L, 8, 8}, 62, 0, 1);
  ParameterSet p = init_unfolding(cfg, L, 63);
  const std::vector<std::string> probed{"decoder.stage0.alpha_raw", "decoder.stage0.eta_raw",
                                        "decoder.stage0.unet.mid.conv1.weight", "decoder.stage1.unet.proj_out.weight"};
  std::vector<Tensor> inputs;
  for (const auto& n : probed) inputs.push_back(p.get(n));
  ad::GraphFn f = [&](ad::Tape& t, std::span<const ad::Var> v) {
    auto vars = BoundParams(t, p, {}).vars();
    for (auto& [name, var] : vars)
      for (std::size_t i = 0; i < probed.size(); ++i)
        if (name == probed[i]) var = v[i];
    auto op = make_op(t, r);
    return ad::sum(ad::square(ad::sub(unfolding_forward(t.constant(rgb), op, BoundParams(t, vars), cfg), t.constant(gt))));
  };
  const auto errs = ad::grad_check(f, inputs, 1e-6, 6, 3);
  for (std::size_t i = 0; i < errs.size(); ++i) CHECK_MESSAGE(errs[i] <= 1e-4, probed[i]);
}
