#include "rulkit/models.hpp"

#include <sstream>

#include "rulkit/checkpoint.hpp"
#include "rulkit/cmapss.hpp"
#include "rulkit/common.hpp"

namespace rulkit {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using MapCRM = Eigen::Map<const RowMat>;

constexpr int kBlocks = 6;
constexpr int kKernel = 3;

// Blocks are 1-based; odd blocks keep the time length, even blocks shrink it
// by 2, so six blocks take w to w - 6.
Padding block_padding(int k) { return k % 2 == 1 ? Padding::same : Padding::valid; }

// ---------------------------------------------------------------------------
// initialization
// ---------------------------------------------------------------------------

Tensor kaiming_uniform(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Vec v(shape_size(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from(shape, v, true);
}

Tensor bias_uniform(int n, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Vec v(n);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from({n}, v, true);
}

void add_batchnorm(ParamMap& params, const std::string& name, int channels) {
  params.emplace(name + ".gamma", Tensor::full({channels}, 1.0, true));
  params.emplace(name + ".beta", Tensor::zeros({channels}, true));
  params.emplace(name + ".running_mean", Tensor::zeros({channels}, false));
  params.emplace(name + ".running_var", Tensor::full({channels}, 1.0, false));
}

void add_conv(ParamMap& params, const std::string& name, int out_ch, int in_ch,
              std::mt19937_64& rng) {
  params.emplace(name + ".weight", kaiming_uniform({out_ch, in_ch, kKernel}, in_ch * kKernel, rng));
  params.emplace(name + ".bias", bias_uniform(out_ch, in_ch * kKernel, rng));
}

void add_linear(ParamMap& params, const std::string& name, int out_dim, int in_dim,
                std::mt19937_64& rng) {
  params.emplace(name + ".weight", kaiming_uniform({out_dim, in_dim}, in_dim, rng));
  params.emplace(name + ".bias", bias_uniform(out_dim, in_dim, rng));
}

// Promote an unbatched tensor to batch size one; remember to squeeze later.
Tensor ensure_batched(const Tensor& x, int batched_ndim, bool& was_batched) {
  was_batched = x.ndim() == batched_ndim;
  if (was_batched) return x;
  RULKIT_CHECK_SHAPE(x.ndim() == batched_ndim - 1,
                     "expected a tensor of " + std::to_string(batched_ndim) + " or " +
                         std::to_string(batched_ndim - 1) + " dimensions, got " +
                         shape_str(x.shape()));
  Shape s;
  s.push_back(1);
  for (int d : x.shape()) s.push_back(d);
  return reshape(x, s);
}

nlohmann::json config_to_json(const FeatureExtractorConfig& cfg) {
  return {{"window", cfg.window},
          {"in_channels", cfg.in_channels},
          {"filters", cfg.filters},
          {"latent", cfg.latent},
          {"dropout", cfg.dropout}};
}

FeatureExtractorConfig config_from_json(const nlohmann::json& j) {
  FeatureExtractorConfig cfg;
  cfg.window = j.at("window").get<int>();
  cfg.in_channels = j.at("in_channels").get<int>();
  cfg.filters = j.at("filters").get<int>();
  cfg.latent = j.at("latent").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  return cfg;
}

}  // namespace

std::string architecture_fingerprint(const FeatureExtractorConfig& cfg) {
  std::ostringstream oss;
  oss << "rulkit-arch-v1|w=" << cfg.window << "|c=" << cfg.in_channels << "|m=" << cfg.filters
      << "|latent=" << cfg.latent << "|pad=";
  for (int k = 1; k <= kBlocks; ++k) oss << (block_padding(k) == Padding::same ? 's' : 'v');
  std::ostringstream hex;
  hex << std::hex << fnv1a(oss.str());
  return hex.str();
}

long long extractor_param_count(const FeatureExtractorConfig& cfg) {
  const long long m = cfg.filters;
  long long total = m * cfg.in_channels * kKernel + m;        // conv1
  total += (kBlocks - 1) * (m * m * kKernel + m);             // conv2..6
  total += kBlocks * 2 * m;                                   // batchnorm scale/shift
  total += static_cast<long long>(cfg.latent) * cfg.flat_dim() + cfg.latent;  // head
  return total;
}

ModelState init_model(const FeatureExtractorConfig& cfg, std::uint64_t seed) {
  RULKIT_CHECK(cfg.window > 6, "init_model: window must exceed 6, got " +
                                   std::to_string(cfg.window));
  RULKIT_CHECK(cfg.in_channels > 0 && cfg.filters > 0 && cfg.latent > 0,
               "init_model: channel, filter, and latent sizes must be positive");
  RULKIT_CHECK(cfg.dropout >= 0.0 && cfg.dropout < 1.0,
               "init_model: dropout must lie in [0, 1), got " + std::to_string(cfg.dropout));

  ModelState state;
  state.config = cfg;
  state.fingerprint = architecture_fingerprint(cfg);
  state.init_seed = seed;
  std::mt19937_64 rng(seed);

  // extractor f
  for (int k = 1; k <= kBlocks; ++k) {
    const int in_ch = k == 1 ? cfg.in_channels : cfg.filters;
    add_conv(state.params, "f.conv" + std::to_string(k), cfg.filters, in_ch, rng);
    add_batchnorm(state.params, "f.bn" + std::to_string(k), cfg.filters);
  }
  add_linear(state.params, "f.head", cfg.latent, cfg.flat_dim(), rng);

  // regression head g
  add_batchnorm(state.params, "g.bn", cfg.latent);
  add_linear(state.params, "g.linear", 1, cfg.latent, rng);

  // decoder (mirror of f): linear back to the flattened shape, then
  // transposed blocks 6..1; tconv k inverts conv k's padding.
  add_linear(state.params, "dec.head", cfg.flat_dim(), cfg.latent, rng);
  for (int k = kBlocks; k >= 1; --k) {
    const int out_ch = k == 1 ? cfg.in_channels : cfg.filters;
    // conv1d_transpose weights are laid out [C_in, C_out, kernel].
    state.params.emplace("dec.tconv" + std::to_string(k) + ".weight",
                         kaiming_uniform({cfg.filters, out_ch, kKernel}, cfg.filters * kKernel, rng));
    state.params.emplace("dec.tconv" + std::to_string(k) + ".bias",
                         bias_uniform(out_ch, cfg.filters * kKernel, rng));
    if (k > 1) add_batchnorm(state.params, "dec.bn" + std::to_string(k), cfg.filters);
  }

  // RBM over [C, 3] visible patches; its weight matrix is exactly the shape
  // of f.conv1.weight so the learned filters can be copied across.
  state.params.emplace("rbm.weight", kaiming_uniform({cfg.filters, cfg.in_channels, kKernel},
                                                     cfg.in_channels * kKernel, rng));
  state.params.emplace("rbm.hbias", Tensor::zeros({cfg.filters}, true));
  state.params.emplace("rbm.vbias", Tensor::zeros({cfg.in_channels, kKernel}, true));
  return state;
}

const Tensor& param(const ModelState& state, const std::string& name) {
  auto it = state.params.find(name);
  RULKIT_CHECK(it != state.params.end(), "model state is missing parameter '" + name + "'");
  return it->second;
}

ParamMap trainable_params(const ModelState& state, const std::string& prefix) {
  ParamMap out;
  for (const auto& [name, tensor] : state.params) {
    if (tensor.requires_grad() && name.rfind(prefix, 0) == 0) out.emplace(name, tensor);
  }
  return out;
}

long long count_values(const ParamMap& params) {
  long long total = 0;
  for (const auto& [name, tensor] : params) total += tensor.size();
  return total;
}

ModelState transfer_for_finetune(const ModelState& source, std::uint64_t init_seed) {
  ModelState fresh = init_model(source.config, init_seed);
  fresh.normalize_before_head = source.normalize_before_head;
  for (const auto& [name, tensor] : source.params) {
    if (name.rfind("f.", 0) != 0) continue;  // head, decoder, RBM start over
    fresh.params.at(name).value() = tensor.value();
  }
  return fresh;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

Tensor feature_extractor_forward(const Tensor& x, const ModelState& state, Mode mode,
                                 std::mt19937_64* rng) {
  const auto& cfg = state.config;
  bool was_batched = false;
  Tensor h = ensure_batched(x, 3, was_batched);
  RULKIT_CHECK_SHAPE(h.dim(1) == cfg.in_channels && h.dim(2) == cfg.window,
                     "feature_extractor_forward: expected frames of shape [N, " +
                         std::to_string(cfg.in_channels) + ", " + std::to_string(cfg.window) +
                         "], got " + shape_str(x.shape()));
  const bool use_dropout = mode == Mode::train && cfg.dropout > 0.0;
  RULKIT_CHECK(!use_dropout || rng != nullptr,
               "feature_extractor_forward: dropout is active in train mode but no rng was given");

  for (int k = 1; k <= kBlocks; ++k) {
    const std::string conv = "f.conv" + std::to_string(k);
    const std::string bn = "f.bn" + std::to_string(k);
    h = conv1d(h, param(state, conv + ".weight"), param(state, conv + ".bias"), block_padding(k));
    Tensor rm = param(state, bn + ".running_mean");  // handle copies share storage
    Tensor rv = param(state, bn + ".running_var");
    h = batchnorm(h, param(state, bn + ".gamma"), param(state, bn + ".beta"), rm, rv, mode);
    h = relu(h);
    if (k < kBlocks && use_dropout) h = timestep_dropout(h, cfg.dropout, *rng, mode);
  }

  h = reshape(h, {h.dim(0), cfg.flat_dim()});
  h = linear(h, param(state, "f.head.weight"), param(state, "f.head.bias"));
  if (!was_batched) h = reshape(h, {cfg.latent});
  return h;
}

Tensor regression_head_forward(const Tensor& embedding, const ModelState& state, bool normalize,
                               Mode mode) {
  bool was_batched = false;
  Tensor h = ensure_batched(embedding, 2, was_batched);
  RULKIT_CHECK_SHAPE(h.dim(1) == state.config.latent,
                     "regression_head_forward: expected embeddings of width " +
                         std::to_string(state.config.latent) + ", got " +
                         shape_str(embedding.shape()));
  if (normalize) h = l2_normalize(h);
  Tensor rm = param(state, "g.bn.running_mean");
  Tensor rv = param(state, "g.bn.running_var");
  h = batchnorm(h, param(state, "g.bn.gamma"), param(state, "g.bn.beta"), rm, rv, mode);
  h = relu(h);
  h = linear(h, param(state, "g.linear.weight"), param(state, "g.linear.bias"));
  return was_batched ? reshape(h, {h.dim(0)}) : reshape(h, Shape{});
}

Tensor predict_rul(const Tensor& x, const ModelState& state, Mode mode, std::mt19937_64* rng) {
  return regression_head_forward(feature_extractor_forward(x, state, mode, rng), state,
                                 state.normalize_before_head, mode);
}

Tensor siamese_distance(const Tensor& a, const Tensor& b) {
  bool a_batched = false;
  bool b_batched = false;
  Tensor an = ensure_batched(a, 2, a_batched);
  Tensor bn = ensure_batched(b, 2, b_batched);
  RULKIT_CHECK_SHAPE(an.shape() == bn.shape(),
                     "siamese_distance: embedding shapes differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  Tensor d = sub(l2_normalize(an), l2_normalize(bn));
  Tensor out = sum_rows(mul(d, d));
  return a_batched ? out : reshape(out, Shape{});
}

Tensor decoder_forward(const Tensor& embedding, const ModelState& state, Mode mode) {
  const auto& cfg = state.config;
  bool was_batched = false;
  Tensor h = ensure_batched(embedding, 2, was_batched);
  RULKIT_CHECK_SHAPE(h.dim(1) == cfg.latent,
                     "decoder_forward: expected embeddings of width " +
                         std::to_string(cfg.latent) + ", got " + shape_str(embedding.shape()));

  auto stage = [](const std::string& label, auto&& fn) -> Tensor {
    try {
      return fn();
    } catch (const ShapeError& e) {
      throw ShapeError("decoder " + label + ": " + e.what());
    }
  };

  h = stage("head", [&] {
    Tensor y = linear(h, param(state, "dec.head.weight"), param(state, "dec.head.bias"));
    return reshape(y, {y.dim(0), cfg.filters, cfg.flat_time()});
  });

  for (int k = kBlocks; k >= 1; --k) {
    const std::string label = "block " + std::to_string(k);
    const std::string tconv = "dec.tconv" + std::to_string(k);
    h = stage(label, [&] {
      return conv1d_transpose(h, param(state, tconv + ".weight"), param(state, tconv + ".bias"),
                              block_padding(k));
    });
    if (k == 1) break;  // final block stays linear: it produces the output
    const std::string bn = "dec.bn" + std::to_string(k);
    h = stage(label, [&] {
      Tensor rm = param(state, bn + ".running_mean");
      Tensor rv = param(state, bn + ".running_var");
      Tensor y = batchnorm(h, param(state, bn + ".gamma"), param(state, bn + ".beta"), rm, rv, mode);
      return relu(y);
    });
  }
  if (!was_batched) h = reshape(h, {cfg.in_channels, cfg.window});
  return h;
}

// ---------------------------------------------------------------------------
// RBM
// ---------------------------------------------------------------------------

namespace {

// Mean hidden activation and its stochastic counterpart. The noise term is a
// standard Gaussian scaled by the logistic sigmoid's derivative at the
// pre-activation, so units near saturation stay nearly deterministic.
Mat noisy_relu(const Mat& pre, std::mt19937_64* rng) {
  if (rng == nullptr) return pre.cwiseMax(0.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat out(pre.rows(), pre.cols());
  for (Eigen::Index r = 0; r < pre.rows(); ++r) {
    for (Eigen::Index c = 0; c < pre.cols(); ++c) {
      const double s = 1.0 / (1.0 + std::exp(-pre(r, c)));
      out(r, c) = std::max(0.0, pre(r, c) + gauss(*rng) * s * (1.0 - s));
    }
  }
  return out;
}

struct RbmViews {
  MapCRM w;          // [m, C*3]
  const Vec& hbias;  // [m]
  const Vec& vbias;  // [C*3]
};

RbmViews rbm_views(const ModelState& state) {
  const Tensor& w = param(state, "rbm.weight");
  const int m = w.dim(0);
  const int visible = w.dim(1) * w.dim(2);
  return {MapCRM(w.value().data(), m, visible), param(state, "rbm.hbias").value(),
          param(state, "rbm.vbias").value()};
}

}  // namespace

RbmStep rbm_energy_step(const Mat& visible, const ModelState& state, std::mt19937_64* rng) {
  RbmViews views = rbm_views(state);
  RULKIT_CHECK_SHAPE(visible.cols() == views.w.cols(),
                     "rbm_energy_step: expected patches of width " +
                         std::to_string(views.w.cols()) + ", got " +
                         std::to_string(visible.cols()));
  RbmStep step;
  step.hidden_pre = (visible * views.w.transpose()).rowwise() + views.hbias.transpose();
  step.hidden = noisy_relu(step.hidden_pre, rng);
  step.visible = (step.hidden * views.w).rowwise() + views.vbias.transpose();
  return step;
}

void rbm_cd1_gradients(const Mat& visible, const ModelState& state, std::mt19937_64& rng) {
  RULKIT_CHECK(visible.rows() > 0, "rbm_cd1_gradients: empty patch batch");
  RbmViews views = rbm_views(state);
  const double inv_b = 1.0 / static_cast<double>(visible.rows());

  // Positive phase uses the noise-free means; the stochastic sample only
  // drives the reconstruction.
  RbmStep step = rbm_energy_step(visible, state, &rng);
  Mat h_pos = step.hidden_pre.cwiseMax(0.0);
  Mat pre_neg = (step.visible * views.w.transpose()).rowwise() + views.hbias.transpose();
  Mat h_neg = pre_neg.cwiseMax(0.0);

  // Gradients of the negative log-likelihood surrogate (minimizer form).
  RowMat gw = (h_neg.transpose() * step.visible - h_pos.transpose() * visible) * inv_b;
  Vec gh = (h_neg.colwise().mean() - h_pos.colwise().mean()).transpose();
  Vec gv = (step.visible.colwise().mean() - visible.colwise().mean()).transpose();

  Tensor weight = param(state, "rbm.weight");  // handle copies share the buffers
  Tensor hbias = param(state, "rbm.hbias");
  Tensor vbias = param(state, "rbm.vbias");
  weight.grad() += Eigen::Map<const Vec>(gw.data(), gw.size());
  hbias.grad() += gh;
  vbias.grad() += gv;
}

Mat rbm_patches(const std::vector<Frame>& frames) {
  RULKIT_CHECK(!frames.empty(), "rbm_patches: no frames given");
  const int w = static_cast<int>(frames.front().values.rows());
  const int channels = static_cast<int>(frames.front().values.cols());
  RULKIT_CHECK_SHAPE(w >= kKernel, "rbm_patches: window of length " + std::to_string(w) +
                                       " is shorter than a patch");
  const int per_frame = w - kKernel + 1;
  Mat patches(static_cast<Eigen::Index>(frames.size()) * per_frame,
              static_cast<Eigen::Index>(channels) * kKernel);
  Eigen::Index row = 0;
  for (const Frame& f : frames) {
    RULKIT_CHECK_SHAPE(f.values.rows() == w && f.values.cols() == channels,
                       "rbm_patches: frames disagree in shape");
    for (int t = 0; t < per_frame; ++t, ++row) {
      for (int c = 0; c < channels; ++c) {
        for (int k = 0; k < kKernel; ++k) patches(row, c * kKernel + k) = f.values(t + k, c);
      }
    }
  }
  return patches;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_model_state(const std::filesystem::path& path, const ModelState& state,
                      const nlohmann::json& extra_meta) {
  Checkpoint ckpt;
  ckpt.meta = extra_meta;
  ckpt.meta["kind"] = "rulkit-model";
  ckpt.meta["config"] = config_to_json(state.config);
  ckpt.meta["fingerprint"] = state.fingerprint;
  ckpt.meta["init_seed"] = state.init_seed;
  ckpt.meta["normalize_before_head"] = state.normalize_before_head;
  ckpt.params = state.params;
  save_checkpoint(path, ckpt);
}

ModelState load_model_state(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  RULKIT_CHECK(ckpt.meta.value("kind", "") == "rulkit-model",
               "load_model_state: '" + path.string() + "' is not a model checkpoint");
  ModelState state;
  try {
    state.config = config_from_json(ckpt.meta.at("config"));
    state.fingerprint = ckpt.meta.at("fingerprint").get<std::string>();
    state.init_seed = ckpt.meta.value("init_seed", 0ull);
    state.normalize_before_head = ckpt.meta.value("normalize_before_head", false);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("load_model_state: malformed metadata in '" + path.string() +
                     "': " + e.what());
  }
  const std::string expected = architecture_fingerprint(state.config);
  RULKIT_CHECK(state.fingerprint == expected,
               "load_model_state: architecture fingerprint mismatch in '" + path.string() +
                   "' (stored " + state.fingerprint + ", config implies " + expected + ")");
  state.params = std::move(ckpt.params);

  // Shape audit against a reference layout of the same config. Trained
  // checkpoints carry only the predictor (f.*, g.*); decoder and RBM blocks
  // are optional but must match the layout when present.
  ModelState reference = init_model(state.config, 0);
  for (const auto& [name, tensor] : reference.params) {
    auto it = state.params.find(name);
    const bool required = name.rfind("f.", 0) == 0 || name.rfind("g.", 0) == 0;
    if (it == state.params.end()) {
      RULKIT_CHECK(!required, "load_model_state: checkpoint lacks parameter '" + name + "'");
      continue;
    }
    RULKIT_CHECK_SHAPE(it->second.shape() == tensor.shape(),
                       "load_model_state: parameter '" + name + "' has shape " +
                           shape_str(it->second.shape()) + ", expected " +
                           shape_str(tensor.shape()));
  }
  for (const auto& kv : state.params)
    RULKIT_CHECK(reference.params.count(kv.first) > 0,
                 "load_model_state: checkpoint carries unknown parameter '" + kv.first + "'");
  return state;
}

}  // namespace rulkit
