#pragma once

#include <random>

#include "rulkit/tensor.hpp"

namespace rulkit {

enum class Padding { valid, same };

// Elementwise; shapes must match exactly (no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);

// Copying reshape; total size must be preserved.
Tensor reshape(const Tensor& x, Shape shape);

// x: [In] or [B, In]; w: [Out, In]; b: [Out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// 1D cross-correlation with kernel size 3.
// x: [C_in, T] or [N, C_in, T]; w: [C_out, C_in, 3]; b: [C_out].
// same: zero padding, T' = T; valid: T' = T - 2.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Padding pad);

// Transposed counterpart, inverting the time arithmetic of a forward conv
// with the given padding. x: [C_in, T] or [N, C_in, T]; w: [C_in, C_out, 3].
// inverse_of valid: T' = T + 2; inverse_of same: T' = T.
Tensor conv1d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, Padding inverse_of);

// Kernel axis swap + tap reversal, [A, B, 3] -> [B, A, 3]. Differentiable.
Tensor flip_kernel(const Tensor& w);

// x: [N, C] or [N, C, T]; gamma/beta: [C]. Train mode normalizes with batch
// statistics (population variance) and updates the running buffers in place;
// eval mode normalizes with the running statistics. Train requires N >= 2.
Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                 Tensor& running_var, Mode mode, double momentum = 0.1, double eps = 1e-5);

// Drops whole time columns (all channels at a time index) with probability p
// and rescales survivors by 1/(1-p). x: [C, T] or [N, C, T]. Eval: identity.
Tensor timestep_dropout(const Tensor& x, double p, std::mt19937_64& rng, Mode mode);

// v / ||v|| per row; x: [D] or [N, D]. Rows with norm <= 1e-12 are rejected.
Tensor l2_normalize(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_rows(const Tensor& x);  // [N, D] -> [N]

Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor rmse_loss(const Tensor& pred, const Tensor& target);

}  // namespace rulkit
