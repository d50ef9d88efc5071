#pragma once

#include <string>
#include <vector>

#include "gradcheck.hpp"

// Randomized gradient checks for every differentiable operator. Shared by
// the unit tests and the acceptance runner so both enforce the same bar.
namespace testutil {

inline constexpr int kGradCheckCases = 100;
inline constexpr double kGradCheckEps = 1e-5;
inline constexpr double kGradCheckTol = 1e-4;

struct OpCheck {
  std::string name;
  // One randomized case; returns the worst relative error found.
  std::function<double(std::mt19937_64&)> run;
};

inline std::vector<OpCheck> op_checks() {
  using namespace rulkit;
  std::vector<OpCheck> checks;
  std::uniform_int_distribution<int> small(1, 6);

  checks.push_back({"add", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 6);
    Shape s{d(rng), d(rng)};
    Tensor a = random_leaf(rng, s), b = random_leaf(rng, s);
    Vec w = random_vec(rng, shape_size(s));
    return max_grad_error([&] { return weighted_sum(add(a, b), w); }, {a, b}, kGradCheckEps);
  }});

  checks.push_back({"sub", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 6);
    Shape s{d(rng)};
    Tensor a = random_leaf(rng, s), b = random_leaf(rng, s);
    Vec w = random_vec(rng, shape_size(s));
    return max_grad_error([&] { return weighted_sum(sub(a, b), w); }, {a, b}, kGradCheckEps);
  }});

  checks.push_back({"mul", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 6);
    Shape s{d(rng), d(rng)};
    Tensor a = random_leaf(rng, s), b = random_leaf(rng, s);
    Vec w = random_vec(rng, shape_size(s));
    return max_grad_error([&] { return weighted_sum(mul(a, b), w); }, {a, b}, kGradCheckEps);
  }});

  checks.push_back({"scale", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 8);
    std::uniform_real_distribution<double> c(-2.0, 2.0);
    Shape s{d(rng)};
    Tensor a = random_leaf(rng, s);
    const double k = c(rng);
    Vec w = random_vec(rng, shape_size(s));
    return max_grad_error([&] { return weighted_sum(scale(a, k), w); }, {a}, kGradCheckEps);
  }});

  checks.push_back({"relu", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 8);
    Shape s{d(rng), d(rng)};
    // Inputs stay clear of the kink so finite differences are valid.
    Tensor a = Tensor::from(s, random_vec_off_zero(rng, shape_size(s)), true);
    Vec w = random_vec(rng, shape_size(s));
    return max_grad_error([&] { return weighted_sum(relu(a), w); }, {a}, kGradCheckEps);
  }});

  checks.push_back({"reshape", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 4);
    const int p = d(rng), q = d(rng);
    Tensor a = random_leaf(rng, {p, q});
    Vec w = random_vec(rng, static_cast<Eigen::Index>(p) * q);
    return max_grad_error([&] { return weighted_sum(reshape(a, {p * q}), w); }, {a},
                          kGradCheckEps);
  }});

  checks.push_back({"linear", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 5), coin(0, 1);
    const int in = d(rng), out = d(rng);
    const bool batched = coin(rng) == 1;
    Shape xs = batched ? Shape{d(rng), in} : Shape{in};
    Tensor x = random_leaf(rng, xs);
    Tensor w = random_leaf(rng, {out, in});
    Tensor b = random_leaf(rng, {out});
    Shape os = batched ? Shape{xs[0], out} : Shape{out};
    Vec wv = random_vec(rng, shape_size(os));
    return max_grad_error([&] { return weighted_sum(linear(x, w, b), wv); }, {x, w, b},
                          kGradCheckEps);
  }});

  checks.push_back({"conv1d", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ch(1, 3), len(3, 7), nb(1, 3), coin(0, 1);
    const int cin = ch(rng), cout = ch(rng), t = len(rng);
    const Padding pad = coin(rng) ? Padding::same : Padding::valid;
    const bool batched = coin(rng) == 1;
    Shape xs = batched ? Shape{nb(rng), cin, t} : Shape{cin, t};
    Tensor x = random_leaf(rng, xs);
    Tensor w = random_leaf(rng, {cout, cin, 3});
    Tensor b = random_leaf(rng, {cout});
    const int tout = pad == Padding::same ? t : t - 2;
    Shape os = batched ? Shape{xs[0], cout, tout} : Shape{cout, tout};
    Vec wv = random_vec(rng, shape_size(os));
    return max_grad_error([&] { return weighted_sum(conv1d(x, w, b, pad), wv); }, {x, w, b},
                          kGradCheckEps);
  }});

  checks.push_back({"conv1d_transpose", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> ch(1, 3), len(1, 6), nb(1, 3), coin(0, 1);
    const int cin = ch(rng), cout = ch(rng), t = len(rng);
    const Padding inv = coin(rng) ? Padding::same : Padding::valid;
    const bool batched = coin(rng) == 1;
    Shape xs = batched ? Shape{nb(rng), cin, t} : Shape{cin, t};
    Tensor x = random_leaf(rng, xs);
    Tensor w = random_leaf(rng, {cin, cout, 3});
    Tensor b = random_leaf(rng, {cout});
    const int tout = inv == Padding::valid ? t + 2 : t;
    Shape os = batched ? Shape{xs[0], cout, tout} : Shape{cout, tout};
    Vec wv = random_vec(rng, shape_size(os));
    return max_grad_error([&] { return weighted_sum(conv1d_transpose(x, w, b, inv), wv); },
                          {x, w, b}, kGradCheckEps);
  }});

  checks.push_back({"flip_kernel", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 4);
    const int a = d(rng), b = d(rng);
    Tensor w = random_leaf(rng, {a, b, 3});
    Vec wv = random_vec(rng, static_cast<Eigen::Index>(a) * b * 3);
    return max_grad_error([&] { return weighted_sum(flip_kernel(w), wv); }, {w}, kGradCheckEps);
  }});

  checks.push_back({"batchnorm_train", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> nd(3, 6), cd(1, 3), td(1, 4), coin(0, 1);
    const int n = nd(rng), c = cd(rng);
    const bool has_time = coin(rng) == 1;
    const int t = has_time ? td(rng) : 1;
    Shape xs = has_time ? Shape{n, c, t} : Shape{n, c};
    // Redraw channels whose batch variance is too small: the normalization
    // becomes stiff there and finite differences lose accuracy.
    Vec xv(shape_size(xs));
    for (int ci = 0; ci < c; ++ci) {
      for (;;) {
        Vec col = random_vec(rng, static_cast<Eigen::Index>(n) * t);
        const double mu = col.mean();
        const double var = (col.array() - mu).square().mean();
        if (var < 0.05) continue;
        for (int ni = 0; ni < n; ++ni)
          for (int ti = 0; ti < t; ++ti)
            xv((static_cast<Eigen::Index>(ni) * c + ci) * t + ti) =
                col(static_cast<Eigen::Index>(ni) * t + ti);
        break;
      }
    }
    Tensor x = Tensor::from(xs, std::move(xv), true);
    Tensor gamma = random_leaf(rng, {c}, 0.5, 1.5);
    Tensor beta = random_leaf(rng, {c});
    Tensor rm = Tensor::zeros({c});
    Tensor rv = Tensor::full({c}, 1.0);
    Vec wv = random_vec(rng, shape_size(xs));
    return max_grad_error(
        [&] { return weighted_sum(batchnorm(x, gamma, beta, rm, rv, Mode::train), wv); },
        {x, gamma, beta}, kGradCheckEps);
  }});

  checks.push_back({"batchnorm_eval", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> nd(1, 4), cd(1, 3), td(1, 4), coin(0, 1);
    const int n = nd(rng), c = cd(rng);
    const bool has_time = coin(rng) == 1;
    Shape xs = has_time ? Shape{n, c, td(rng)} : Shape{n, c};
    Tensor x = random_leaf(rng, xs);
    Tensor gamma = random_leaf(rng, {c}, 0.5, 1.5);
    Tensor beta = random_leaf(rng, {c});
    Tensor rm = Tensor::from({c}, random_vec(rng, c));
    Tensor rv = Tensor::from({c}, random_vec(rng, c, 0.5, 2.0));
    Vec wv = random_vec(rng, shape_size(xs));
    return max_grad_error(
        [&] { return weighted_sum(batchnorm(x, gamma, beta, rm, rv, Mode::eval), wv); },
        {x, gamma, beta}, kGradCheckEps);
  }});

  checks.push_back({"timestep_dropout", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> nd(1, 3), cd(1, 3), td(2, 6);
    Shape xs{nd(rng), cd(rng), td(rng)};
    Tensor x = random_leaf(rng, xs);
    const std::uint64_t seed = rng();
    Vec wv = random_vec(rng, shape_size(xs));
    return max_grad_error(
        [&] {
          std::mt19937_64 mask_rng(seed);  // same mask for every evaluation
          return weighted_sum(timestep_dropout(x, 0.3, mask_rng, Mode::train), wv);
        },
        {x}, kGradCheckEps);
  }});

  checks.push_back({"l2_normalize", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> nd(1, 4), dd(2, 6), coin(0, 1);
    const bool batched = coin(rng) == 1;
    const int d = dd(rng);
    Shape xs = batched ? Shape{nd(rng), d} : Shape{d};
    Tensor x = Tensor::from(xs, random_vec_off_zero(rng, shape_size(xs), 0.2), true);
    Vec wv = random_vec(rng, shape_size(xs));
    return max_grad_error([&] { return weighted_sum(l2_normalize(x), wv); }, {x}, kGradCheckEps);
  }});

  checks.push_back({"sum", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 8);
    Tensor a = random_leaf(rng, {d(rng), d(rng)});
    return max_grad_error([&] { return sum(a); }, {a}, kGradCheckEps);
  }});

  checks.push_back({"mean", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 8);
    Tensor a = random_leaf(rng, {d(rng)});
    return max_grad_error([&] { return mean(a); }, {a}, kGradCheckEps);
  }});

  checks.push_back({"sum_rows", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 6);
    const int n = d(rng), k = d(rng);
    Tensor a = random_leaf(rng, {n, k});
    Vec wv = random_vec(rng, n);
    return max_grad_error([&] { return weighted_sum(sum_rows(a), wv); }, {a}, kGradCheckEps);
  }});

  checks.push_back({"mse_loss", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 8);
    Shape s{d(rng)};
    Tensor p = random_leaf(rng, s), t = random_leaf(rng, s);
    return max_grad_error([&] { return mse_loss(p, t); }, {p, t}, kGradCheckEps);
  }});

  checks.push_back({"rmse_loss", [](std::mt19937_64& rng) {
    std::uniform_int_distribution<int> d(1, 8);
    Shape s{d(rng)};
    // Keep predictions and targets apart so the loss stays away from its
    // root singularity at zero.
    Tensor p = Tensor::from(s, random_vec(rng, shape_size(s), 1.0, 2.0), true);
    Tensor t = Tensor::from(s, random_vec(rng, shape_size(s), -2.0, -1.0), true);
    return max_grad_error([&] { return rmse_loss(p, t); }, {p, t}, kGradCheckEps);
  }});

  return checks;
}

}  // namespace testutil
