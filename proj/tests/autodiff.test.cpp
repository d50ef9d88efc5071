#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gradsuite.hpp"
#include "rulkit/adam.hpp"
#include "rulkit/checkpoint.hpp"
#include "rulkit/ops.hpp"

using namespace rulkit;

namespace {

Tensor vec_tensor(std::initializer_list<double> vals, bool requires_grad = false) {
  Vec v(static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (double x : vals) v(i++) = x;
  return Tensor::from({static_cast<int>(vals.size())}, std::move(v), requires_grad);
}

}  // namespace

TEST_SUITE("autodiff") {

// ---------------------------------------------------------------------------
// forward values
// ---------------------------------------------------------------------------

TEST_CASE("conv1d valid padding matches a hand-computed sliding dot product") {
  Tensor x = Tensor::from({1, 5}, Vec{{1, 2, 3, 4, 5}});
  Tensor w = Tensor::full({1, 1, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv1d(x, w, b, Padding::valid);
  REQUIRE(y.shape() == Shape{1, 3});
  CHECK(y.value()(0) == doctest::Approx(6.0));
  CHECK(y.value()(1) == doctest::Approx(9.0));
  CHECK(y.value()(2) == doctest::Approx(12.0));
}

TEST_CASE("conv1d identity kernel with same padding reproduces the input") {
  std::mt19937_64 rng(7);
  Tensor x = Tensor::from({2, 6}, testutil::random_vec(rng, 12));
  Vec wv = Vec::Zero(2 * 2 * 3);
  // Per-channel identity: w[c][c] = (0,1,0).
  wv(0 * 6 + 0 * 3 + 1) = 1.0;
  wv(1 * 6 + 1 * 3 + 1) = 1.0;
  Tensor w = Tensor::from({2, 2, 3}, std::move(wv));
  Tensor y = conv1d(x, w, Tensor::zeros({2}), Padding::same);
  REQUIRE(y.shape() == x.shape());
  CHECK((y.value() - x.value()).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
}

TEST_CASE("conv1d minimal valid input yields one output step") {
  Tensor x = Tensor::from({1, 3}, Vec{{1, 1, 1}});
  Tensor y = conv1d(x, Tensor::full({1, 1, 3}, 2.0), Tensor::zeros({1}), Padding::valid);
  CHECK(y.shape() == Shape{1, 1});
  CHECK(y.item() == doctest::Approx(6.0));
}

TEST_CASE("conv1d rejects mismatched channels and short inputs") {
  Tensor x = Tensor::from({2, 5}, Vec::Zero(10));
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 3, 3}), Tensor::zeros({1}), Padding::valid),
                  ShapeError);
  Tensor tiny = Tensor::from({1, 2}, Vec::Zero(2));
  CHECK_THROWS_AS(conv1d(tiny, Tensor::zeros({1, 1, 3}), Tensor::zeros({1}), Padding::valid),
                  ShapeError);
  CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 2, 3}), Tensor::zeros({2}), Padding::same),
                  ShapeError);
}

TEST_CASE("linear matches hand computation") {
  Tensor x = vec_tensor({1, 2, 3});
  Tensor w = Tensor::full({1, 3}, 1.0);
  Tensor b = vec_tensor({1});
  CHECK(linear(x, w, b).item() == doctest::Approx(7.0));

  Tensor eye = Tensor::from({3, 3}, Vec{{1, 0, 0, 0, 1, 0, 0, 0, 1}});
  Tensor y = linear(x, eye, Tensor::zeros({3}));
  CHECK((y.value() - x.value()).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));

  Tensor zero_w = Tensor::zeros({2, 3});
  Tensor bias = vec_tensor({4, -1});
  Tensor z = linear(x, zero_w, bias);
  CHECK(z.value()(0) == doctest::Approx(4.0));
  CHECK(z.value()(1) == doctest::Approx(-1.0));
}

TEST_CASE("losses and normalization match direct formulas") {
  CHECK(mse_loss(vec_tensor({1, 2}), vec_tensor({1, 2})).item() == doctest::Approx(0.0));
  CHECK(rmse_loss(vec_tensor({3}), vec_tensor({0})).item() == doctest::Approx(3.0));

  Tensor n = l2_normalize(vec_tensor({3, 4}));
  CHECK(n.value()(0) == doctest::Approx(0.6));
  CHECK(n.value()(1) == doctest::Approx(0.8));

  CHECK_THROWS_AS(l2_normalize(vec_tensor({0, 0})), DegenerateInputError);
}

TEST_CASE("l2_normalize output has unit norm for any usable input") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    std::uniform_int_distribution<int> dd(1, 16);
    const int d = dd(rng);
    Vec v = testutil::random_vec(rng, d, -10.0, 10.0);
    if (v.norm() <= 1e-12) continue;
    Tensor y = l2_normalize(Tensor::from({d}, std::move(v)));
    CHECK(std::abs(y.value().norm() - 1.0) < 1e-9);
  }
}

// ---------------------------------------------------------------------------
// batchnorm
// ---------------------------------------------------------------------------

TEST_CASE("batchnorm train normalizes each channel") {
  std::mt19937_64 rng(3);
  const int n = 64, c = 3;
  Vec xv(n * c);
  std::normal_distribution<double> dist(7.0, 2.0);
  for (Eigen::Index i = 0; i < xv.size(); ++i) xv(i) = dist(rng);
  Tensor x = Tensor::from({n, c}, std::move(xv));
  Tensor gamma = Tensor::full({c}, 1.0);
  Tensor beta = Tensor::zeros({c});
  Tensor rm = Tensor::zeros({c});
  Tensor rv = Tensor::full({c}, 1.0);
  Tensor y = batchnorm(x, gamma, beta, rm, rv, Mode::train);

  for (int ci = 0; ci < c; ++ci) {
    double mu = 0.0;
    for (int ni = 0; ni < n; ++ni) mu += y.value()(ni * c + ci);
    mu /= n;
    double var = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const double d = y.value()(ni * c + ci) - mu;
      var += d * d;
    }
    var /= n;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batchnorm scale and shift apply after normalization") {
  Tensor x = Tensor::from({4, 1}, Vec{{1, 2, 3, 4}});
  Tensor rm = Tensor::zeros({1});
  Tensor rv = Tensor::full({1}, 1.0);
  Tensor y = batchnorm(x, Tensor::zeros({1}), Tensor::full({1}, 0.5), rm, rv, Mode::train);
  for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(y.value()(i) == doctest::Approx(0.5));
}

TEST_CASE("batchnorm eval with unit running stats is identity up to scale and shift") {
  std::mt19937_64 rng(5);
  Tensor x = Tensor::from({3, 2}, testutil::random_vec(rng, 6));
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::full({2}, 1.0);
  Tensor y = batchnorm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), rm, rv, Mode::eval);
  CHECK((y.value() - x.value()).lpNorm<Eigen::Infinity>() < 1e-4);
}

TEST_CASE("batchnorm train rejects a batch of one") {
  Tensor x = Tensor::from({1, 2}, Vec{{1, 2}});
  Tensor rm = Tensor::zeros({2});
  Tensor rv = Tensor::full({2}, 1.0);
  CHECK_THROWS_AS(
      batchnorm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), rm, rv, Mode::train),
      DegenerateInputError);
  // Eval mode has no such restriction.
  CHECK_NOTHROW(batchnorm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), rm, rv, Mode::eval));
}

TEST_CASE("batchnorm updates running statistics with momentum") {
  Tensor x = Tensor::from({2, 1}, Vec{{2, 6}});  // mean 4, population var 4, unbiased var 8
  Tensor rm = Tensor::zeros({1});
  Tensor rv = Tensor::full({1}, 1.0);
  batchnorm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), rm, rv, Mode::train);
  CHECK(rm.value()(0) == doctest::Approx(0.9 * 0.0 + 0.1 * 4.0));
  CHECK(rv.value()(0) == doctest::Approx(0.9 * 1.0 + 0.1 * 8.0));
}

// ---------------------------------------------------------------------------
// timestep dropout
// ---------------------------------------------------------------------------

TEST_CASE("timestep_dropout zeroes whole columns and rescales survivors") {
  std::mt19937_64 rng(17);
  const int c = 4, t = 50;
  Tensor x = Tensor::from({c, t}, Vec::Constant(c * t, 1.0));
  Tensor y = timestep_dropout(x, 0.5, rng, Mode::train);
  int dropped = 0;
  for (int ti = 0; ti < t; ++ti) {
    const double first = y.value()(ti);
    for (int ci = 1; ci < c; ++ci) CHECK(y.value()(ci * t + ti) == doctest::Approx(first));
    if (first == 0.0)
      ++dropped;
    else
      CHECK(first == doctest::Approx(2.0));  // 1 / (1 - 0.5)
  }
  CHECK(dropped > 0);
  CHECK(dropped < t);
}

TEST_CASE("timestep_dropout is identity at p=0 and in eval mode") {
  std::mt19937_64 rng(19);
  Tensor x = Tensor::from({2, 5}, testutil::random_vec(rng, 10));
  Tensor y0 = timestep_dropout(x, 0.0, rng, Mode::train);
  CHECK((y0.value() - x.value()).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
  Tensor ye = timestep_dropout(x, 0.9, rng, Mode::eval);
  CHECK((ye.value() - x.value()).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
  CHECK_THROWS_AS(timestep_dropout(x, 1.0, rng, Mode::train), ValueError);
}

TEST_CASE("timestep_dropout mean over many masks converges to the input") {
  std::mt19937_64 rng(23);
  const int c = 2, t = 8;
  Tensor x = Tensor::from({c, t}, testutil::random_vec(rng, c * t, 0.5, 1.5));
  Vec acc = Vec::Zero(c * t);
  const int samples = 10000;
  for (int s = 0; s < samples; ++s)
    acc += timestep_dropout(x, 0.5, rng, Mode::train).value();
  acc /= samples;
  for (Eigen::Index i = 0; i < acc.size(); ++i)
    CHECK(std::abs(acc(i) - x.value()(i)) / std::abs(x.value()(i)) < 0.02);
}

// ---------------------------------------------------------------------------
// kernel flip / transpose conv
// ---------------------------------------------------------------------------

TEST_CASE("flip_kernel is an involution and swaps channel roles") {
  std::mt19937_64 rng(29);
  Tensor w = testutil::random_leaf(rng, {3, 2, 3});
  Tensor ff = flip_kernel(flip_kernel(w));
  CHECK(ff.shape() == w.shape());
  CHECK((ff.value() - w.value()).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
  Tensor f = flip_kernel(w);
  CHECK(f.shape() == Shape{2, 3, 3});
  // (i=1, j=0, k=2) of the source lands at (j=0, i=1, k=0).
  CHECK(f.value()((0 * 3 + 1) * 3 + 0) == w.value()((1 * 2 + 0) * 3 + 2));
}

TEST_CASE("conv1d_transpose inverts the conv shape map") {
  std::mt19937_64 rng(31);
  Tensor x = testutil::random_leaf(rng, {4, 10});
  Tensor w = testutil::random_leaf(rng, {3, 4, 3});
  Tensor b = Tensor::zeros({3});
  Tensor valid = conv1d(x, w, b, Padding::valid);
  CHECK(valid.shape() == Shape{3, 8});
  Tensor w_back = testutil::random_leaf(rng, {3, 4, 3});
  Tensor back = conv1d_transpose(valid, w_back, Tensor::zeros({4}), Padding::valid);
  CHECK(back.shape() == Shape{4, 10});
  Tensor same = conv1d_transpose(valid, w_back, Tensor::zeros({4}), Padding::same);
  CHECK(same.shape() == Shape{4, 8});
}

// ---------------------------------------------------------------------------
// backward mechanics
// ---------------------------------------------------------------------------

TEST_CASE("backward of sum(w*x) with constant x gives grad w = x") {
  Tensor w = vec_tensor({1, 2, 3}, true);
  Tensor x = vec_tensor({4, 5, 6});
  backward(sum(mul(w, x)));
  CHECK((w.grad() - x.value()).lpNorm<Eigen::Infinity>() == doctest::Approx(0.0));
}

TEST_CASE("backward accumulates through shared subexpressions") {
  Tensor a = Tensor::scalar(3.0, true);
  Tensor s = add(a, a);       // ds/da = 2
  backward(sum(mul(s, s)));   // d(s^2)/da = 2s * 2 = 24
  CHECK(a.grad()(0) == doctest::Approx(24.0));
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor v = vec_tensor({1, 2}, true);
  CHECK_THROWS_AS(backward(v), ValueError);
}

TEST_CASE("disconnected parameters receive no gradient") {
  Tensor used = vec_tensor({1, 2}, true);
  Tensor unused = vec_tensor({3, 4}, true);
  backward(sum(used));
  CHECK(used.has_grad());
  CHECK_FALSE(unused.has_grad());
  CHECK(unused.grad().lpNorm<Eigen::Infinity>() == 0.0);  // materializes zeros
}

TEST_CASE("NoGradGuard suppresses graph construction") {
  Tensor w = vec_tensor({1, 2}, true);
  NoGradGuard guard;
  Tensor y = sum(mul(w, w));
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("identical seeds give bit-identical values and gradients") {
  auto run = [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Tensor x = testutil::random_leaf(rng, {2, 3, 8});
    Tensor w = testutil::random_leaf(rng, {2, 3, 3});
    Tensor b = testutil::random_leaf(rng, {2});
    Tensor gamma = Tensor::full({2}, 1.0, true);
    Tensor beta = Tensor::zeros({2}, true);
    Tensor rm = Tensor::zeros({2});
    Tensor rv = Tensor::full({2}, 1.0);
    Tensor h = relu(batchnorm(conv1d(x, w, b, Padding::same), gamma, beta, rm, rv, Mode::train));
    Tensor d = timestep_dropout(h, 0.25, rng, Mode::train);
    Tensor loss = rmse_loss(reshape(d, {2 * 2 * 8}), Tensor::zeros({2 * 2 * 8}));
    backward(loss);
    return std::make_pair(loss.item(), Vec(w.grad()));
  };
  auto [l1, g1] = run(99);
  auto [l2, g2] = run(99);
  CHECK(l1 == l2);
  CHECK((g1 - g2).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("gradients match central finite differences on randomized cases") {
  std::mt19937_64 rng(20260814u);
  for (auto& check : testutil::op_checks()) {
    double worst = 0.0;
    for (int i = 0; i < testutil::kGradCheckCases; ++i)
      worst = std::max(worst, check.run(rng));
    CAPTURE(check.name);
    CHECK_MESSAGE(worst < testutil::kGradCheckTol,
                  check.name << ": worst relative error " << worst);
  }
}

// ---------------------------------------------------------------------------
// adam
// ---------------------------------------------------------------------------

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  Tensor p = vec_tensor({1, -2, 3}, true);
  p.grad().setZero();
  const Vec before = p.value();
  Adam opt({{"p", p}});
  for (int i = 0; i < 3; ++i) opt.step();
  CHECK((p.value() - before).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("adam first step moves each coordinate by about the learning rate") {
  Tensor p = vec_tensor({0.5, -0.5, 2.0}, true);
  p.grad() = Vec{{2.0, -0.3, 0.0001}};
  AdamConfig cfg;
  cfg.lr = 0.05;
  Adam opt({{"p", p}}, cfg);
  const Vec before = p.value();
  opt.step();
  const Vec delta = p.value() - before;
  // First bias-corrected step is lr * g / (|g| + eps) = lr * sign(g), almost
  // independent of the gradient's magnitude.
  CHECK(delta(0) == doctest::Approx(-0.05).epsilon(1e-6));
  CHECK(delta(1) == doctest::Approx(0.05).epsilon(1e-6));
  CHECK(delta(2) == doctest::Approx(-0.05).epsilon(1e-3));
}

TEST_CASE("adam treats identical parameters identically") {
  Tensor a = vec_tensor({1, 2}, true);
  Tensor b = vec_tensor({1, 2}, true);
  a.grad() = Vec{{0.7, -0.2}};
  b.grad() = Vec{{0.7, -0.2}};
  Adam opt({{"a", a}, {"b", b}}, {.lr = 0.01});
  opt.step();
  CHECK((a.value() - b.value()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("adam names the parameter that is missing a gradient") {
  Tensor p = vec_tensor({1}, true);
  Adam opt({{"head.weight", p}});
  CHECK_THROWS_WITH_AS(opt.step(),
                       "Adam: parameter 'head.weight' has no gradient; run backward() first",
                       ValueError);
}

TEST_CASE("adam descends a simple quadratic") {
  Tensor p = vec_tensor({5.0}, true);
  Adam opt({{"p", p}}, {.lr = 0.1});
  double prev = 25.0;
  for (int i = 0; i < 50; ++i) {
    opt.zero_grad();
    Tensor loss = sum(mul(p, p));
    backward(loss);
    opt.step();
    if (i % 10 == 9) {
      const double now = p.value()(0) * p.value()(0);
      CHECK(now < prev);
      prev = now;
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round trip preserves values, shapes, flags, and meta") {
  std::mt19937_64 rng(41);
  Checkpoint ckpt;
  ckpt.params["f.conv1.weight"] = testutil::random_leaf(rng, {4, 2, 3});
  ckpt.params["f.conv1.bias"] = testutil::random_leaf(rng, {4});
  ckpt.params["f.bn1.running_mean"] = Tensor::from({4}, testutil::random_vec(rng, 4), false);
  ckpt.meta["fingerprint"] = "abc123";
  ckpt.meta["init_seed"] = 7;

  const auto path = std::filesystem::temp_directory_path() / "rulkit_ckpt_test.json";
  save_checkpoint(path, ckpt);
  Checkpoint loaded = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(loaded.version == kCheckpointVersion);
  CHECK(loaded.meta["fingerprint"] == "abc123");
  CHECK(loaded.meta["init_seed"] == 7);
  REQUIRE(loaded.params.size() == 3);
  for (const auto& [name, orig] : ckpt.params) {
    REQUIRE(loaded.params.count(name) == 1);
    const Tensor& got = loaded.params.at(name);
    CHECK(got.shape() == orig.shape());
    CHECK(got.requires_grad() == orig.requires_grad());
    CHECK((got.value() - orig.value()).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("checkpoint load rejects missing or unknown versions and bad payloads") {
  const auto dir = std::filesystem::temp_directory_path();
  auto write = [&](const char* name, const std::string& text) {
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p;
  };
  const auto no_version = write("rulkit_ckpt_nov.json", R"({"params": {}})");
  CHECK_THROWS_AS(load_checkpoint(no_version), ParseError);
  const auto bad_version = write("rulkit_ckpt_badv.json", R"({"version": 999, "params": {}})");
  CHECK_THROWS_AS(load_checkpoint(bad_version), ParseError);
  const auto not_json = write("rulkit_ckpt_garbage.json", "not json at all {");
  CHECK_THROWS_AS(load_checkpoint(not_json), ParseError);
  const auto bad_shape = write(
      "rulkit_ckpt_shape.json",
      R"({"version": 1, "params": {"w": {"shape": [3], "data": [1.0, 2.0]}}})");
  CHECK_THROWS_AS(load_checkpoint(bad_shape), ParseError);
  CHECK_THROWS_AS(load_checkpoint(dir / "rulkit_ckpt_does_not_exist.json"), IoError);
  for (const auto* n :
       {"rulkit_ckpt_nov.json", "rulkit_ckpt_badv.json", "rulkit_ckpt_garbage.json",
        "rulkit_ckpt_shape.json"})
    std::filesystem::remove(dir / n);
}

}  // TEST_SUITE
