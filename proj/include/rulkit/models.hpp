#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "json.hpp"
#include "rulkit/adam.hpp"
#include "rulkit/ops.hpp"

namespace rulkit {

// The feature extractor f: six ConvBlocks (conv k3 -> batchnorm -> relu,
// time-step dropout after blocks 1-5), flatten, then a linear layer to the
// latent embedding. Blocks 1, 3, 5 use same padding; 2, 4, 6 valid, so the
// time axis shrinks from w to w - 6 before flattening.
struct FeatureExtractorConfig {
  int window = 30;       // w
  int in_channels = 14;  // selected sensor channels
  int filters = 32;      // m, per ConvBlock
  int latent = 64;
  double dropout = 0.0;  // time-step dropout probability

  int flat_time() const { return window - 6; }
  int flat_dim() const { return filters * flat_time(); }
};

// Stable identity of the wiring: anything that changes tensor shapes or the
// padding schedule changes this string.
std::string architecture_fingerprint(const FeatureExtractorConfig& cfg);

// Closed-form count of f's trainable parameters.
long long extractor_param_count(const FeatureExtractorConfig& cfg);

// All parameters of extractor f, head g, decoder, and RBM in one flat map.
// Running statistics live alongside trainable tensors, flagged by
// requires_grad = false.
struct ModelState {
  FeatureExtractorConfig config;
  std::string fingerprint;
  std::uint64_t init_seed = 0;
  bool normalize_before_head = false;  // on when f was siamese pre-trained
  ParamMap params;
};

// Fresh Kaiming-uniform initialization of every component under one seed.
ModelState init_model(const FeatureExtractorConfig& cfg, std::uint64_t seed);

// Parameter access with a diagnosable failure mode.
const Tensor& param(const ModelState& state, const std::string& name);

// Trainable parameters under a name prefix ("f.", "g.", "dec.", "rbm.").
ParamMap trainable_params(const ModelState& state, const std::string& prefix);
long long count_values(const ParamMap& params);

// Extractor parameters (and running stats) of `source`, bit-exact, on top of
// a fresh random init for everything else — the head g starts over.
ModelState transfer_for_finetune(const ModelState& source, std::uint64_t init_seed);

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

/// x: [N, C, w] or [C, w] -> embedding [N, latent] or [latent].
// Train mode requires N >= 2 (batchnorm) and an rng when dropout > 0.
Tensor feature_extractor_forward(const Tensor& x, const ModelState& state, Mode mode,
                                 std::mt19937_64* rng = nullptr);

// embedding [N, latent] or [latent] -> RUL estimate [N] or scalar.
// normalize: divide the embedding by its norm first (self-supervised f).
Tensor regression_head_forward(const Tensor& embedding, const ModelState& state, bool normalize,
                               Mode mode);

// Full predictor g(f(x)); normalization follows state.normalize_before_head.
Tensor predict_rul(const Tensor& x, const ModelState& state, Mode mode,
                   std::mt19937_64* rng = nullptr);

// Squared Euclidean distance of the normalized embeddings, in [0, 4].
// a, b: [N, D] -> [N], or [D] -> scalar.
Tensor siamese_distance(const Tensor& a, const Tensor& b);

// embedding [N, latent] -> reconstruction [N, C, w] (mirror of f).
Tensor decoder_forward(const Tensor& embedding, const ModelState& state, Mode mode);

// ---------------------------------------------------------------------------
// RBM (shares the first ConvBlock's geometry)
// ---------------------------------------------------------------------------

// One Gibbs half-step on a batch of visible patches V [B, C*3]:
// hidden pre-activations, noisy-ReLU samples (or their noise-free means when
// rng is null), and the mean-field visible reconstruction.
struct RbmStep {
  Mat hidden_pre;  // [B, m]
  Mat hidden;      // [B, m]
  Mat visible;     // [B, C*3] reconstruction
};

RbmStep rbm_energy_step(const Mat& visible, const ModelState& state, std::mt19937_64* rng);

// CD-1 gradients (for a minimizer: negative log-likelihood direction) from
// one batch of patches; writes into the grad buffers of rbm.* parameters.
void rbm_cd1_gradients(const Mat& visible, const ModelState& state, std::mt19937_64& rng);

// All interior [C, 3] patches of every frame, one row per patch, flattened
// row-major (channel-major, tap-minor) to match the conv weight layout.
Mat rbm_patches(const std::vector<struct Frame>& frames);

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_model_state(const std::filesystem::path& path, const ModelState& state,
                      const nlohmann::json& extra_meta = nlohmann::json::object());
// Verifies the stored fingerprint against the stored config.
ModelState load_model_state(const std::filesystem::path& path);

}  // namespace rulkit
