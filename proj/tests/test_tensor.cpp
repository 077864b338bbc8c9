#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dreamrace/adam.hpp"
#include "dreamrace/grad_check.hpp"
#include "dreamrace/symlog.hpp"
#include "dreamrace/tensor.hpp"

using namespace dreamrace;

namespace {

Param<double> random_param(const std::string& name, Shape shape, Rng& rng,
                           double scale = 1.0) {
  Param<double> p(name, std::move(shape));
  for (auto& v : p.value) v = scale * rng.normal();
  return p;
}

// independent nested-loop matrix multiply
std::vector<double> matmul_oracle(const std::vector<double>& a,
                                  const std::vector<double>& b, int m, int k,
                                  int n) {
  std::vector<double> out(size_t(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l)
        out[size_t(i) * n + j] += a[size_t(i) * k + l] * b[size_t(l) * n + j];
  return out;
}

}  // namespace

TEST_CASE("affine zero input passes bias through") {
  Tape<double> tape;
  auto x = tape.zeros({3, 2});
  Param<double> W("W", {2, 2});
  Param<double> b("b", {2});
  W.value = {5.0, -1.0, 2.0, 0.5};
  b.value = {1.0, 2.0};
  auto y = affine(x, tape.param(W), tape.param(b));
  for (int r = 0; r < 3; ++r) {
    CHECK(y.val()[r * 2 + 0] == 1.0);
    CHECK(y.val()[r * 2 + 1] == 2.0);
  }
}

TEST_CASE("affine identity weights reproduce input") {
  Tape<double> tape;
  Rng rng(7);
  std::vector<double> xv(12);
  for (auto& v : xv) v = rng.normal();
  auto x = tape.constant({3, 4}, xv);
  Param<double> W("W", {4, 4});
  for (int i = 0; i < 4; ++i) W.value[i * 4 + i] = 1.0;
  Param<double> b("b", {4});
  auto y = affine(x, tape.param(W), tape.param(b));
  for (size_t i = 0; i < xv.size(); ++i)
    CHECK(y.val()[i] == Catch::Approx(xv[i]));
}

TEST_CASE("affine matches nested-loop matmul oracle") {
  Rng rng(11);
  Tape<double> tape;
  std::vector<double> xv(12), wv(8);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : wv) v = rng.normal();
  auto x = tape.constant({3, 4}, xv);
  Param<double> W("W", {4, 2});
  W.value = wv;
  Param<double> b("b", {2});
  b.value = {0.3, -0.7};
  auto y = affine(x, tape.param(W), tape.param(b));
  auto expect = matmul_oracle(xv, wv, 3, 4, 2);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(y.val()[r * 2 + c] ==
            Catch::Approx(expect[r * 2 + c] + b.value[c]).epsilon(1e-12));
}

TEST_CASE("affine shape mismatch names both shapes") {
  Tape<double> tape;
  auto x = tape.zeros({3, 4});
  Param<double> W("W", {5, 2});
  Param<double> b("b", {2});
  auto wt = tape.param(W);
  auto bt = tape.param(b);
  REQUIRE_THROWS_WITH(affine(x, wt, bt),
                      Catch::Matchers::ContainsSubstring("[3x4]") &&
                          Catch::Matchers::ContainsSubstring("[5x2]"));
}

TEST_CASE("pointwise nonlinearities at zero") {
  Tape<double> tape;
  auto x = tape.zeros({1});
  CHECK(tanh(x).val()[0] == 0.0);
  CHECK(sigmoid(x).val()[0] == 0.5);
  CHECK(exp(x).val()[0] == 1.0);
  CHECK(silu(x).val()[0] == 0.0);
}

TEST_CASE("tanh derivative matches central difference at 0.3") {
  const double x0 = 0.3, eps = 1e-6;
  Tape<double> tape;
  Param<double> p("x", {1});
  p.value = {x0};
  auto y = tanh(tape.param(p));
  tape.backward(y);
  const double numeric =
      (std::tanh(x0 + eps) - std::tanh(x0 - eps)) / (2 * eps);
  CHECK(std::abs(p.grad[0] - numeric) < 1e-8);
}

TEST_CASE("every activation passes a finite-difference check") {
  for (Act kind : {Act::tanh, Act::silu, Act::exp, Act::sigmoid, Act::softplus}) {
    Rng rng(17 + int(kind));
    Param<double> p = random_param("x", {4, 3}, rng);
    auto loss = [&](bool with_grad) {
      Tape<double> tape;
      // weight the outputs so each element has a distinct gradient
      std::vector<double> wv(12);
      Rng wr(5);
      for (auto& v : wv) v = wr.normal();
      auto w = tape.constant({4, 3}, wv);
      auto out = sum_all(mul(activation(tape.param(p), kind), w));
      if (with_grad) tape.backward(out);
      return out.scalar();
    };
    auto rep = grad_check<double>({&p}, loss);
    INFO("activation kind " << int(kind));
    CHECK(rep.max_rel_err < 1e-7);
  }
}

TEST_CASE("backward on sum gives ones; on half norm gives the values") {
  Rng rng(3);
  Param<double> W = random_param("W", {3, 3}, rng);
  {
    Tape<double> tape;
    tape.backward(sum_all(tape.param(W)));
    for (double g : W.grad) CHECK(g == 1.0);
  }
  W.zero_grad();
  {
    Tape<double> tape;
    auto w = tape.param(W);
    tape.backward(scale(sum_all(square(w)), 0.5));
    for (int i = 0; i < 9; ++i) CHECK(W.grad[i] == Catch::Approx(W.value[i]));
  }
}

TEST_CASE("backward accumulates across calls without reset") {
  Param<double> W("W", {2});
  W.value = {1.0, 2.0};
  Tape<double> t1;
  t1.backward(sum_all(t1.param(W)));
  Tape<double> t2;
  t2.backward(sum_all(t2.param(W)));
  CHECK(W.grad[0] == 2.0);
  CHECK(W.grad[1] == 2.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> tape;
  Param<double> W("W", {2, 2});
  auto w = tape.param(W);
  REQUIRE_THROWS_AS(tape.backward(w), UsageError);
}

TEST_CASE("three-layer MLP gradient matches finite differences") {
  Rng rng(23);
  Param<double> W1 = random_param("W1", {5, 7}, rng, 0.6);
  Param<double> b1 = random_param("b1", {7}, rng, 0.1);
  Param<double> W2 = random_param("W2", {7, 6}, rng, 0.6);
  Param<double> b2 = random_param("b2", {6}, rng, 0.1);
  Param<double> W3 = random_param("W3", {6, 2}, rng, 0.6);
  Param<double> b3 = random_param("b3", {2}, rng, 0.1);
  std::vector<double> input(4 * 5);
  for (auto& v : input) v = rng.normal();
  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    auto x = tape.constant({4, 5}, input);
    auto h1 = tanh(affine(x, tape.param(W1), tape.param(b1)));
    auto h2 = silu(affine(h1, tape.param(W2), tape.param(b2)));
    auto y = affine(h2, tape.param(W3), tape.param(b3));
    auto out = mean_all(square(y));
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  auto rep =
      grad_check<double>({&W1, &b1, &W2, &b2, &W3, &b3}, loss, 1e-5);
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("grad_check on a quadratic is exact to roundoff") {
  Rng rng(29);
  Param<double> W = random_param("W", {4}, rng);
  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    auto out = scale(sum_all(square(tape.param(W))), 0.5);
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  auto rep = grad_check<double>({&W}, loss, 1e-4);
  CHECK(rep.max_rel_err < 1e-9);
}

// --------------------------------------------------------------------------
// categorical ops

TEST_CASE("saturated logits sample the dominant class") {
  Tape<double> tape;
  Rng rng(1);
  auto l = tape.constant({1, 2}, {50.0, -50.0});
  auto z = categorical_sample_st(l, 1, 2, 0.0, rng);
  CHECK(z.val()[0] == 1.0);
  CHECK(z.val()[1] == 0.0);
}

TEST_CASE("non-finite logits raise a numeric error") {
  Tape<double> tape;
  Rng rng(1);
  auto l = tape.constant({1, 2}, {std::nan(""), 0.0});
  REQUIRE_THROWS_AS(categorical_sample_st(l, 1, 2, 0.0, rng), NumericError);
}

TEST_CASE("uniform logits sample all classes at equal frequency") {
  Rng rng(99);
  const int draws = 100000;
  std::vector<int> counts(4, 0);
  Tape<double> tape;
  auto l = tape.zeros({1, 4});
  for (int i = 0; i < draws; ++i) {
    auto z = categorical_sample_st(l, 1, 4, 0.0, rng);
    for (int c = 0; c < 4; ++c)
      if (z.val()[c] == 1.0) counts[c]++;
  }
  for (int c = 0; c < 4; ++c)
    CHECK(std::abs(double(counts[c]) / draws - 0.25) < 0.02);
}

TEST_CASE("straight-through gradient equals softmax jacobian row") {
  // smoothed objective: expected value of a linear score under softmax
  Rng rng(5);
  Param<double> logits("l", {1, 4});
  std::vector<double> score = {0.7, -1.3, 0.2, 2.1};
  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    Rng r(42);
    auto z = categorical_sample_st(tape.param(logits), 1, 4, 0.0, r,
                                   SampleMode::smooth);
    auto s = tape.constant({1, 4}, score);
    auto out = sum_all(mul(z, s));
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  auto rep = grad_check<double>({&logits}, loss);
  CHECK(rep.max_rel_err < 1e-8);

  // the sampled (straight-through) gradient is the same as the smoothed one
  logits.zero_grad();
  std::vector<double> smooth_grad;
  {
    Tape<double> tape;
    Rng r(42);
    auto z = categorical_sample_st(tape.param(logits), 1, 4, 0.0, r,
                                   SampleMode::smooth);
    tape.backward(sum_all(mul(z, tape.constant({1, 4}, score))));
    smooth_grad = logits.grad;
  }
  logits.zero_grad();
  {
    Tape<double> tape;
    Rng r(42);
    auto z = categorical_sample_st(tape.param(logits), 1, 4, 0.0, r,
                                   SampleMode::sample);
    tape.backward(sum_all(mul(z, tape.constant({1, 4}, score))));
  }
  for (int i = 0; i < 4; ++i)
    CHECK(logits.grad[i] == Catch::Approx(smooth_grad[i]).margin(1e-14));
}

TEST_CASE("KL of identical logits is zero; one-hot vs uniform is ln 2") {
  Tape<double> tape;
  Rng rng(3);
  std::vector<double> lv(8);
  for (auto& v : lv) v = rng.normal();
  auto p = tape.constant({2, 4}, lv);
  auto q = tape.constant({2, 4}, lv);
  auto kl = categorical_kl(p, q, 2, 2, 0.0);
  CHECK(kl.val()[0] == Catch::Approx(0.0).margin(1e-14));
  CHECK(kl.val()[1] == Catch::Approx(0.0).margin(1e-14));

  auto ph = tape.constant({1, 2}, {20.0, -20.0});
  auto qu = tape.constant({1, 2}, {0.0, 0.0});
  auto kl2 = categorical_kl(ph, qu, 1, 2, 0.0);
  CHECK(kl2.val()[0] == Catch::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("KL is non-negative on fuzzed logits") {
  Rng rng(31);
  Tape<double> tape;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> pv(12), qv(12);
    for (auto& v : pv) v = 4.0 * rng.normal();
    for (auto& v : qv) v = 4.0 * rng.normal();
    auto kl = categorical_kl(tape.constant({2, 6}, pv),
                             tape.constant({2, 6}, qv), 2, 3, 0.01);
    for (double v : kl.val()) REQUIRE(v >= -1e-12);
    if (tape.size() > 3000) tape.reset();
  }
}

TEST_CASE("softmax probabilities sum to one per row") {
  Rng rng(37);
  for (int it = 0; it < 200; ++it) {
    std::vector<double> lv(8);
    for (auto& v : lv) v = 10.0 * rng.normal();
    std::vector<double> p(8);
    detail::softmax_unimix(lv.data(), p.data(), 8, 0.0);
    double sum = 0.0;
    for (double v : p) sum += v;
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("categorical kl and entropy pass finite-difference checks") {
  Rng rng(41);
  Param<double> pl = random_param("p", {3, 8}, rng, 1.5);
  Param<double> ql = random_param("q", {3, 8}, rng, 1.5);
  std::vector<double> w = {0.7, -0.4, 1.1};
  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    auto kl = categorical_kl(tape.param(pl), tape.param(ql), 2, 4, 0.01);
    auto out = sum_all(mul(kl, tape.constant({3}, w)));
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  auto rep = grad_check<double>({&pl, &ql}, loss);
  CHECK(rep.max_rel_err < 1e-7);

  auto loss_h = [&](bool with_grad) {
    Tape<double> tape;
    auto h = categorical_entropy(tape.param(pl), 2, 4, 0.01);
    auto out = sum_all(mul(h, tape.constant({3}, w)));
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  auto rep_h = grad_check<double>({&pl}, loss_h);
  CHECK(rep_h.max_rel_err < 1e-7);
}

TEST_CASE("likelihood heads pass finite-difference checks") {
  Rng rng(47);
  Param<double> m = random_param("mean", {3, 5}, rng);
  std::vector<double> targ(15);
  for (auto& v : targ) v = rng.normal();
  auto loss_g = [&](bool with_grad) {
    Tape<double> tape;
    auto nll = gaussian_nll(tape.param(m), tape.constant({3, 5}, targ));
    auto out = mean_all(nll);
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  CHECK(grad_check<double>({&m}, loss_g).max_rel_err < 1e-7);

  Param<double> bl = random_param("logit", {4}, rng);
  std::vector<double> bt = {1.0, 0.0, 1.0, 1.0};
  auto loss_b = [&](bool with_grad) {
    Tape<double> tape;
    auto nll = bernoulli_nll(tape.param(bl), tape.constant({4}, bt));
    auto out = sum_all(nll);
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  CHECK(grad_check<double>({&bl}, loss_b).max_rel_err < 1e-7);

  Param<double> cl = random_param("ce_logits", {2, 6}, rng);
  std::vector<double> tp(12, 0.0);
  tp[2] = 0.5;
  tp[3] = 0.5;
  tp[6 + 1] = 1.0;
  auto loss_c = [&](bool with_grad) {
    Tape<double> tape;
    auto ce = softmax_ce(tape.param(cl), tape.constant({2, 6}, tp));
    auto out = sum_all(ce);
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  CHECK(grad_check<double>({&cl}, loss_c).max_rel_err < 1e-7);
}

TEST_CASE("structural ops route gradients correctly") {
  Rng rng(53);
  Param<double> a = random_param("a", {3, 2}, rng);
  Param<double> b = random_param("b", {3, 4}, rng);
  std::vector<double> w(18);
  for (auto& v : w) v = rng.normal();
  auto loss = [&](bool with_grad) {
    Tape<double> tape;
    auto cat = concat_cols<double>({tape.param(a), tape.param(b)});
    auto sl = slice_cols(cat, 1, 3);          // spans both inputs
    auto rows = concat_rows<double>({sl, scale(sl, 2.0)});
    auto out = sum_all(mul(rows, tape.constant({6, 3}, w)));
    if (with_grad) tape.backward(out);
    return out.scalar();
  };
  CHECK(grad_check<double>({&a, &b}, loss).max_rel_err < 1e-8);
}

TEST_CASE("stop_grad blocks the gradient path") {
  Param<double> W("W", {2});
  W.value = {3.0, -2.0};
  Tape<double> tape;
  auto w = tape.param(W);
  auto out = sum_all(mul(stop_grad(w), w));  // d/dW = stop(W) only
  tape.backward(out);
  CHECK(W.grad[0] == 3.0);
  CHECK(W.grad[1] == -2.0);
}

// --------------------------------------------------------------------------
// adam

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
  Param<double> W("W", {3});
  W.value = {1.0, -2.0, 0.5};
  auto before = W.value;
  AdamState<double> st;
  adam_step<double>({&W}, st, {});
  CHECK(W.value == before);
}

TEST_CASE("adam first step from zero state is -lr * g / (|g| + eps)") {
  Param<double> W("W", {2});
  W.value = {0.0, 0.0};
  W.grad = {0.3, -2.0};
  AdamConfig<double> cfg;
  cfg.lr = 1e-2;
  cfg.eps = 1e-8;
  cfg.clip_norm = 0;
  AdamState<double> st;
  adam_step<double>({&W}, st, cfg);
  for (int i = 0; i < 2; ++i) {
    const double g = (i == 0) ? 0.3 : -2.0;
    const double expect = -cfg.lr * g / (std::abs(g) + cfg.eps);
    CHECK(W.value[i] == Catch::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("adam step size approaches lr under a constant gradient") {
  Param<double> W("W", {1});
  W.value = {0.0};
  AdamConfig<double> cfg;
  cfg.lr = 1e-3;
  cfg.clip_norm = 0;
  AdamState<double> st;
  double prev = 0.0;
  double step = 0.0;
  for (int i = 0; i < 2000; ++i) {
    W.grad = {0.7};
    prev = W.value[0];
    adam_step<double>({&W}, st, cfg);
    step = prev - W.value[0];
  }
  CHECK(step == Catch::Approx(cfg.lr).epsilon(1e-3));
}

TEST_CASE("graph evaluation is deterministic per seed") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape<float> tape;
    std::vector<float> xv(64);
    for (auto& v : xv) v = float(rng.normal());
    auto x = tape.constant({8, 8}, xv);
    auto l = tanh(x);
    auto z = categorical_sample_st(l, 2, 4, 0.01f, rng);
    return std::make_pair(l.val(), z.val());
  };
  auto a = run(123);
  auto b = run(123);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

// --------------------------------------------------------------------------
// symlog / two-hot

TEST_CASE("symlog is odd and invertible; symlog(0) = 0") {
  CHECK(symlog(0.0) == 0.0);
  for (double x : {-40.0, -2.5, -0.1, 0.3, 7.0, 123.0}) {
    CHECK(symexp(symlog(x)) == Catch::Approx(x).epsilon(1e-12));
    CHECK(symlog(-x) == Catch::Approx(-symlog(x)));
  }
}

TEST_CASE("two-hot encode 2.5 on bins {2,3} gives weights (0.5, 0.5)") {
  double bins[2] = {2.0, 3.0};
  double out[2] = {0.0, 0.0};
  BinGrid<double>::twohot_encode(2.5, bins, 2, out);
  CHECK(out[0] == Catch::Approx(0.5));
  CHECK(out[1] == Catch::Approx(0.5));
}

TEST_CASE("two-hot of zero decodes back to zero expectation") {
  BinGrid<double> grid(41, -20.0, 20.0);
  std::vector<double> w(41);
  grid.twohot(0.0, w.data());
  CHECK(grid.expectation(w.data()) == Catch::Approx(0.0).margin(1e-12));
  // round trip at typical reward magnitudes
  for (double v : {-4.0, 0.48, 10.0, 20.0}) {
    grid.twohot(v, w.data());
    CHECK(grid.expectation(w.data()) == Catch::Approx(v).epsilon(1e-6));
  }
}
