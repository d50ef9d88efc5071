#include "rulkit/ops.hpp"

#include <cmath>

namespace rulkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using MapCRM = Eigen::Map<const RowMat>;

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  RULKIT_CHECK_SHAPE(a.shape() == b.shape(), op << ": shape mismatch " << shape_str(a.shape())
                                                << " vs " << shape_str(b.shape()));
}

Tensor elementwise(const Tensor& a, const Tensor& b, const char* name, double sign_b) {
  check_same_shape(a, b, name);
  Vec out = a.value() + sign_b * b.value();
  return make_op(a.shape(), std::move(out), {a, b}, [sign_b](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], sign_b * self.grad);
  });
}

// Splits [N, C, T] vs [C, T] inputs; ops below treat everything as batched.
struct Batched {
  int n, c, t;
  bool had_batch;
};

Batched as_batched(const Tensor& x, const char* op) {
  RULKIT_CHECK_SHAPE(x.ndim() == 2 || x.ndim() == 3,
                     op << ": expected [C,T] or [N,C,T], got " << shape_str(x.shape()));
  if (x.ndim() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  return {1, x.dim(0), x.dim(1), false};
}

// Shared conv kernel with integer padding p in {0, 1, 2}; T' = T + 2p - 2.
Tensor conv_impl(const Tensor& x, const Tensor& w, const Tensor& b, int p) {
  const Batched bt = as_batched(x, "conv1d");
  RULKIT_CHECK_SHAPE(w.ndim() == 3 && w.dim(2) == 3,
                     "conv1d: weight must be [C_out, C_in, 3], got " << shape_str(w.shape()));
  const int c_out = w.dim(0), c_in = w.dim(1);
  RULKIT_CHECK_SHAPE(bt.c == c_in, "conv1d: input has " << bt.c << " channels but weight expects "
                                                        << c_in);
  RULKIT_CHECK_SHAPE(b.ndim() == 1 && b.dim(0) == c_out,
                     "conv1d: bias must be [C_out]=" << c_out << ", got " << shape_str(b.shape()));
  const int t_out = bt.t + 2 * p - 2;
  RULKIT_CHECK_SHAPE(t_out >= 1, "conv1d: time length " << bt.t << " too short for this padding");

  const int n = bt.n, t_in = bt.t;
  auto cols = std::make_shared<Mat>(c_in * 3, n * t_out);
  {
    const double* xd = x.value().data();
    for (int ni = 0; ni < n; ++ni)
      for (int ci = 0; ci < c_in; ++ci) {
        const double* row = xd + (static_cast<std::ptrdiff_t>(ni) * c_in + ci) * t_in;
        for (int dk = 0; dk < 3; ++dk) {
          const int r = ci * 3 + dk;
          for (int t = 0; t < t_out; ++t) {
            const int src = t + dk - p;
            (*cols)(r, ni * t_out + t) = (src >= 0 && src < t_in) ? row[src] : 0.0;
          }
        }
      }
  }
  MapCRM wm(w.value().data(), c_out, c_in * 3);
  Mat out_mat = wm * (*cols);
  out_mat.colwise() += b.value();

  Vec out(static_cast<Eigen::Index>(n) * c_out * t_out);
  for (int ni = 0; ni < n; ++ni)
    for (int co = 0; co < c_out; ++co)
      out.segment((static_cast<Eigen::Index>(ni) * c_out + co) * t_out, t_out) =
          out_mat.row(co).segment(ni * t_out, t_out);

  Shape out_shape = bt.had_batch ? Shape{n, c_out, t_out} : Shape{c_out, t_out};
  return make_op(std::move(out_shape), std::move(out), {x, w, b},
                 [cols, n, c_in, c_out, t_in, t_out, p](detail::Node& self) {
                   Mat g_mat(c_out, n * t_out);
                   for (int ni = 0; ni < n; ++ni)
                     for (int co = 0; co < c_out; ++co)
                       g_mat.row(co).segment(ni * t_out, t_out) = self.grad.segment(
                           (static_cast<Eigen::Index>(ni) * c_out + co) * t_out, t_out);

                   auto& xp = *self.parents[0];
                   auto& wp = *self.parents[1];
                   auto& bp = *self.parents[2];
                   if (bp.requires_grad) detail::accumulate(bp, g_mat.rowwise().sum());
                   if (wp.requires_grad) {
                     // [C_in*3, C_out] column-major reads out flat as the
                     // row-major layout of [C_out, C_in, 3].
                     Mat dw_t = (g_mat * cols->transpose()).transpose();
                     detail::accumulate(wp, Eigen::Map<const Vec>(dw_t.data(), dw_t.size()));
                   }
                   if (xp.requires_grad) {
                     MapCRM wm(wp.value.data(), c_out, c_in * 3);
                     Mat dcols = wm.transpose() * g_mat;
                     Vec dx = Vec::Zero(xp.value.size());
                     for (int ni = 0; ni < n; ++ni)
                       for (int ci = 0; ci < c_in; ++ci) {
                         double* drow =
                             dx.data() + (static_cast<std::ptrdiff_t>(ni) * c_in + ci) * t_in;
                         for (int dk = 0; dk < 3; ++dk) {
                           const int r = ci * 3 + dk;
                           for (int t = 0; t < t_out; ++t) {
                             const int src = t + dk - p;
                             if (src >= 0 && src < t_in) drow[src] += dcols(r, ni * t_out + t);
                           }
                         }
                       }
                     detail::accumulate(xp, dx);
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, "add", 1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, "sub", -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Vec out = a.value().cwiseProduct(b.value());
  return make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& a = *self.parents[0];
    auto& b = *self.parents[1];
    if (a.requires_grad) detail::accumulate(a, self.grad.cwiseProduct(b.value));
    if (b.requires_grad) detail::accumulate(b, self.grad.cwiseProduct(a.value));
  });
}

Tensor scale(const Tensor& a, double c) {
  Vec out = c * a.value();
  return make_op(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    detail::accumulate(*self.parents[0], c * self.grad);
  });
}

Tensor relu(const Tensor& x) {
  Vec out = x.value().cwiseMax(0.0);
  return make_op(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& xp = *self.parents[0];
    if (!xp.requires_grad) return;
    Vec dx = (xp.value.array() > 0.0).select(self.grad, Vec::Zero(self.grad.size()));
    detail::accumulate(xp, dx);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  RULKIT_CHECK_SHAPE(shape_size(shape) == x.size(), "reshape: cannot view " << shape_str(x.shape())
                                                        << " as " << shape_str(shape));
  return make_op(std::move(shape), x.value(), {x}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  RULKIT_CHECK_SHAPE(x.ndim() == 1 || x.ndim() == 2,
                     "linear: expected [In] or [B,In], got " << shape_str(x.shape()));
  RULKIT_CHECK_SHAPE(w.ndim() == 2, "linear: weight must be 2-D, got " << shape_str(w.shape()));
  const bool batched = x.ndim() == 2;
  const int rows = batched ? x.dim(0) : 1;
  const int in = batched ? x.dim(1) : x.dim(0);
  const int out_dim = w.dim(0);
  RULKIT_CHECK_SHAPE(w.dim(1) == in, "linear: input width " << in << " does not match weight "
                                                            << shape_str(w.shape()));
  RULKIT_CHECK_SHAPE(b.ndim() == 1 && b.dim(0) == out_dim,
                     "linear: bias must be [" << out_dim << "], got " << shape_str(b.shape()));

  MapCRM xm(x.value().data(), rows, in);
  MapCRM wm(w.value().data(), out_dim, in);
  RowMat y = xm * wm.transpose();
  y.rowwise() += b.value().transpose();

  Shape out_shape = batched ? Shape{rows, out_dim} : Shape{out_dim};
  return make_op(std::move(out_shape), Eigen::Map<Vec>(y.data(), y.size()), {x, w, b},
                 [rows, in, out_dim](detail::Node& self) {
                   MapCRM gm(self.grad.data(), rows, out_dim);
                   auto& xp = *self.parents[0];
                   auto& wp = *self.parents[1];
                   auto& bp = *self.parents[2];
                   if (bp.requires_grad) detail::accumulate(bp, gm.colwise().sum().transpose());
                   if (wp.requires_grad) {
                     MapCRM xm(xp.value.data(), rows, in);
                     RowMat dw = gm.transpose() * xm;
                     detail::accumulate(wp, Eigen::Map<Vec>(dw.data(), dw.size()));
                   }
                   if (xp.requires_grad) {
                     MapCRM wm(wp.value.data(), out_dim, in);
                     RowMat dx = gm * wm;
                     detail::accumulate(xp, Eigen::Map<Vec>(dx.data(), dx.size()));
                   }
                 });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Padding pad) {
  if (pad == Padding::valid) {
    const Batched bt = as_batched(x, "conv1d");
    RULKIT_CHECK_SHAPE(bt.t >= 3, "conv1d: valid padding needs T >= 3, got T=" << bt.t);
  }
  return conv_impl(x, w, b, pad == Padding::same ? 1 : 0);
}

Tensor flip_kernel(const Tensor& w) {
  RULKIT_CHECK_SHAPE(w.ndim() == 3 && w.dim(2) == 3,
                     "flip_kernel: expected [A,B,3], got " << shape_str(w.shape()));
  const int a = w.dim(0), b = w.dim(1);
  auto permute = [a, b](const Vec& src) {
    Vec dst(src.size());
    for (int i = 0; i < a; ++i)
      for (int j = 0; j < b; ++j)
        for (int k = 0; k < 3; ++k)
          dst((static_cast<Eigen::Index>(j) * a + i) * 3 + (2 - k)) =
              src((static_cast<Eigen::Index>(i) * b + j) * 3 + k);
    return dst;
  };
  // The permutation maps [A,B,3] to [B,A,3]; applying the [B,A,3] version to
  // the gradient maps it back.
  auto unpermute = [a, b](const Vec& src) {
    Vec dst(src.size());
    for (int j = 0; j < b; ++j)
      for (int i = 0; i < a; ++i)
        for (int k = 0; k < 3; ++k)
          dst((static_cast<Eigen::Index>(i) * b + j) * 3 + (2 - k)) =
              src((static_cast<Eigen::Index>(j) * a + i) * 3 + k);
    return dst;
  };
  return make_op(Shape{b, a, 3}, permute(w.value()), {w}, [unpermute](detail::Node& self) {
    detail::accumulate(*self.parents[0], unpermute(self.grad));
  });
}

Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, Padding inverse_of) {
  RULKIT_CHECK_SHAPE(w.ndim() == 3 && w.dim(2) == 3,
                     "conv1d_transpose: weight must be [C_in, C_out, 3], got "
                         << shape_str(w.shape()));
  const Batched bt = as_batched(x, "conv1d_transpose");
  RULKIT_CHECK_SHAPE(bt.c == w.dim(0), "conv1d_transpose: input has "
                                           << bt.c << " channels but weight expects " << w.dim(0));
  const int p = inverse_of == Padding::valid ? 2 : 1;
  return conv_impl(x, flip_kernel(w), b, p);
}

Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, Mode mode, double momentum, double eps) {
  RULKIT_CHECK_SHAPE(x.ndim() == 2 || x.ndim() == 3,
                     "batchnorm: expected [N,C] or [N,C,T], got " << shape_str(x.shape()));
  const int n = x.dim(0);
  const int c = x.dim(1);
  const int t = x.ndim() == 3 ? x.dim(2) : 1;
  RULKIT_CHECK_SHAPE(gamma.ndim() == 1 && gamma.dim(0) == c && beta.shape() == gamma.shape(),
                     "batchnorm: scale/shift must be [" << c << "]");
  RULKIT_CHECK_SHAPE(running_mean.size() == c && running_var.size() == c,
                     "batchnorm: running statistics must be [" << c << "]");
  if (mode == Mode::train && n < 2)
    throw DegenerateInputError("batchnorm: batch of size " + std::to_string(n) +
                               " cannot be normalized in train mode");

  const Eigen::Index m = static_cast<Eigen::Index>(n) * t;  // pooled count per channel
  const double* xd = x.value().data();
  auto at = [c, t, xd](int ni, int ci, int ti) {
    return xd[(static_cast<std::ptrdiff_t>(ni) * c + ci) * t + ti];
  };

  Vec mu(c), var(c);
  if (mode == Mode::train) {
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int ni = 0; ni < n; ++ni)
        for (int ti = 0; ti < t; ++ti) s += at(ni, ci, ti);
      mu(ci) = s / static_cast<double>(m);
      double v = 0.0;
      for (int ni = 0; ni < n; ++ni)
        for (int ti = 0; ti < t; ++ti) {
          const double d = at(ni, ci, ti) - mu(ci);
          v += d * d;
        }
      var(ci) = v / static_cast<double>(m);
    }
    // Unbiased variance feeds the running buffer; normalization itself uses
    // the population form.
    const double unbias = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1) : 1.0;
    running_mean.value() = (1.0 - momentum) * running_mean.value() + momentum * mu;
    running_var.value() = (1.0 - momentum) * running_var.value() + momentum * (unbias * var);
  } else {
    mu = running_mean.value();
    var = running_var.value();
  }

  auto inv_std = std::make_shared<Vec>((var.array() + eps).rsqrt().matrix());
  auto xhat = std::make_shared<Vec>(x.size());
  Vec out(x.size());
  {
    const double* gd = gamma.value().data();
    const double* bd = beta.value().data();
    for (int ni = 0; ni < n; ++ni)
      for (int ci = 0; ci < c; ++ci) {
        const Eigen::Index base = (static_cast<Eigen::Index>(ni) * c + ci) * t;
        for (int ti = 0; ti < t; ++ti) {
          const double h = (xd[base + ti] - mu(ci)) * (*inv_std)(ci);
          (*xhat)(base + ti) = h;
          out(base + ti) = gd[ci] * h + bd[ci];
        }
      }
  }

  const bool train = mode == Mode::train;
  return make_op(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, t, m, train, inv_std, xhat](detail::Node& self) {
        auto& xp = *self.parents[0];
        auto& gp = *self.parents[1];
        auto& bp = *self.parents[2];
        auto idx = [c, t](int ni, int ci, int ti) {
          return (static_cast<Eigen::Index>(ni) * c + ci) * t + ti;
        };
        Vec dgamma = Vec::Zero(c), dbeta = Vec::Zero(c);
        for (int ni = 0; ni < n; ++ni)
          for (int ci = 0; ci < c; ++ci)
            for (int ti = 0; ti < t; ++ti) {
              const Eigen::Index i = idx(ni, ci, ti);
              dgamma(ci) += self.grad(i) * (*xhat)(i);
              dbeta(ci) += self.grad(i);
            }
        if (gp.requires_grad) detail::accumulate(gp, dgamma);
        if (bp.requires_grad) detail::accumulate(bp, dbeta);
        if (!xp.requires_grad) return;

        Vec dx(self.grad.size());
        if (train) {
          for (int ci = 0; ci < c; ++ci) {
            const double k = gp.value(ci) * (*inv_std)(ci) / static_cast<double>(m);
            for (int ni = 0; ni < n; ++ni)
              for (int ti = 0; ti < t; ++ti) {
                const Eigen::Index i = idx(ni, ci, ti);
                dx(i) = k * (static_cast<double>(m) * self.grad(i) - dbeta(ci) -
                             (*xhat)(i)*dgamma(ci));
              }
          }
        } else {
          for (int ci = 0; ci < c; ++ci) {
            const double k = gp.value(ci) * (*inv_std)(ci);
            for (int ni = 0; ni < n; ++ni)
              for (int ti = 0; ti < t; ++ti) {
                const Eigen::Index i = idx(ni, ci, ti);
                dx(i) = k * self.grad(i);
              }
          }
        }
        detail::accumulate(xp, dx);
      });
}

Tensor timestep_dropout(const Tensor& x, double p, std::mt19937_64& rng, Mode mode) {
  RULKIT_CHECK(p >= 0.0 && p < 1.0, "timestep_dropout: probability must be in [0,1), got " << p);
  const Batched bt = as_batched(x, "timestep_dropout");
  if (mode == Mode::eval) {
    return make_op(x.shape(), x.value(), {x}, [](detail::Node& self) {
      detail::accumulate(*self.parents[0], self.grad);
    });
  }
  const int n = bt.n, c = bt.c, t = bt.t;
  auto col_scale = std::make_shared<Vec>(static_cast<Eigen::Index>(n) * t);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < col_scale->size(); ++i)
    (*col_scale)(i) = unif(rng) < p ? 0.0 : keep_scale;

  Vec out(x.size());
  const double* xd = x.value().data();
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const Eigen::Index base = (static_cast<Eigen::Index>(ni) * c + ci) * t;
      for (int ti = 0; ti < t; ++ti)
        out(base + ti) = xd[base + ti] * (*col_scale)(static_cast<Eigen::Index>(ni) * t + ti);
    }
  return make_op(x.shape(), std::move(out), {x}, [n, c, t, col_scale](detail::Node& self) {
    auto& xp = *self.parents[0];
    if (!xp.requires_grad) return;
    Vec dx(self.grad.size());
    for (int ni = 0; ni < n; ++ni)
      for (int ci = 0; ci < c; ++ci) {
        const Eigen::Index base = (static_cast<Eigen::Index>(ni) * c + ci) * t;
        for (int ti = 0; ti < t; ++ti)
          dx(base + ti) =
              self.grad(base + ti) * (*col_scale)(static_cast<Eigen::Index>(ni) * t + ti);
      }
    detail::accumulate(xp, dx);
  });
}

Tensor l2_normalize(const Tensor& x) {
  RULKIT_CHECK_SHAPE(x.ndim() == 1 || x.ndim() == 2,
                     "l2_normalize: expected [D] or [N,D], got " << shape_str(x.shape()));
  const bool batched = x.ndim() == 2;
  const int rows = batched ? x.dim(0) : 1;
  const int d = batched ? x.dim(1) : x.dim(0);

  auto norms = std::make_shared<Vec>(rows);
  Vec out(x.size());
  for (int r = 0; r < rows; ++r) {
    const auto seg = x.value().segment(static_cast<Eigen::Index>(r) * d, d);
    const double nrm = seg.norm();
    if (nrm <= 1e-12)
      throw DegenerateInputError("l2_normalize: vector norm " + std::to_string(nrm) +
                                 " too small at row " + std::to_string(r));
    (*norms)(r) = nrm;
    out.segment(static_cast<Eigen::Index>(r) * d, d) = seg / nrm;
  }
  auto normalized = std::make_shared<Vec>(out);
  return make_op(x.shape(), std::move(out), {x}, [rows, d, norms, normalized](detail::Node& self) {
    auto& xp = *self.parents[0];
    if (!xp.requires_grad) return;
    Vec dx(self.grad.size());
    for (int r = 0; r < rows; ++r) {
      const Eigen::Index off = static_cast<Eigen::Index>(r) * d;
      const auto y = normalized->segment(off, d);
      const auto g = self.grad.segment(off, d);
      dx.segment(off, d) = (g - y * y.dot(g)) / (*norms)(r);
    }
    detail::accumulate(xp, dx);
  });
}

Tensor sum(const Tensor& x) {
  return make_op(Shape{}, Vec::Constant(1, x.value().sum()), {x}, [](detail::Node& self) {
    auto& xp = *self.parents[0];
    if (xp.requires_grad)
      detail::accumulate(xp, Vec::Constant(xp.value.size(), self.grad(0)));
  });
}

Tensor mean(const Tensor& x) {
  RULKIT_CHECK(x.size() > 0, "mean: empty tensor");
  const double inv_n = 1.0 / static_cast<double>(x.size());
  return make_op(Shape{}, Vec::Constant(1, x.value().mean()), {x}, [inv_n](detail::Node& self) {
    auto& xp = *self.parents[0];
    if (xp.requires_grad)
      detail::accumulate(xp, Vec::Constant(xp.value.size(), self.grad(0) * inv_n));
  });
}

Tensor sum_rows(const Tensor& x) {
  RULKIT_CHECK_SHAPE(x.ndim() == 2, "sum_rows: expected [N,D], got " << shape_str(x.shape()));
  const int rows = x.dim(0), d = x.dim(1);
  Vec out(rows);
  for (int r = 0; r < rows; ++r) out(r) = x.value().segment(static_cast<Eigen::Index>(r) * d, d).sum();
  return make_op(Shape{rows}, std::move(out), {x}, [rows, d](detail::Node& self) {
    auto& xp = *self.parents[0];
    if (!xp.requires_grad) return;
    Vec dx(xp.value.size());
    for (int r = 0; r < rows; ++r)
      dx.segment(static_cast<Eigen::Index>(r) * d, d).setConstant(self.grad(r));
    detail::accumulate(xp, dx);
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse_loss");
  RULKIT_CHECK(pred.size() > 0, "mse_loss: empty input");
  const double n = static_cast<double>(pred.size());
  const Vec diff = pred.value() - target.value();
  const double loss = diff.squaredNorm() / n;
  return make_op(Shape{}, Vec::Constant(1, loss), {pred, target}, [n](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& t = *self.parents[1];
    const Vec d = (2.0 / n) * self.grad(0) * (p.value - t.value);
    if (p.requires_grad) detail::accumulate(p, d);
    if (t.requires_grad) detail::accumulate(t, -d);
  });
}

Tensor rmse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "rmse_loss");
  RULKIT_CHECK(pred.size() > 0, "rmse_loss: empty input");
  const double n = static_cast<double>(pred.size());
  const Vec diff = pred.value() - target.value();
  const double loss = std::sqrt(diff.squaredNorm() / n);
  return make_op(Shape{}, Vec::Constant(1, loss), {pred, target}, [n, loss](detail::Node& self) {
    auto& p = *self.parents[0];
    auto& t = *self.parents[1];
    const double denom = n * std::max(loss, 1e-12);
    const Vec d = (self.grad(0) / denom) * (p.value - t.value);
    if (p.requires_grad) detail::accumulate(p, d);
    if (t.requires_grad) detail::accumulate(t, -d);
  });
}

}  // namespace rulkit
