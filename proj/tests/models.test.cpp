#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "rulkit/cmapss.hpp"
#include "rulkit/models.hpp"

using namespace rulkit;

namespace {

Tensor random_frames(std::mt19937_64& rng, int n, const FeatureExtractorConfig& cfg) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(static_cast<Eigen::Index>(n) * cfg.in_channels * cfg.window);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from({n, cfg.in_channels, cfg.window}, v, false);
}

Tensor random_embeddings(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(static_cast<Eigen::Index>(n) * d);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from({n, d}, v, false);
}

const std::vector<int> kDefaultWindows = {30, 20, 15};

}  // namespace

TEST_SUITE("models") {

TEST_CASE("extractor maps frames to the latent width for every default window") {
  std::mt19937_64 rng(11);
  for (int w : kDefaultWindows) {
    FeatureExtractorConfig cfg;
    cfg.window = w;
    ModelState state = init_model(cfg, 5);
    Tensor x = random_frames(rng, 4, cfg);
    Tensor e = feature_extractor_forward(x, state, Mode::eval);
    CHECK(e.shape() == Shape{4, 64});
    // the same frames, unbatched
    Tensor first = Tensor::from({cfg.in_channels, cfg.window},
                                Vec(x.value().head(cfg.in_channels * cfg.window)), false);
    Tensor e1 = feature_extractor_forward(first, state, Mode::eval);
    CHECK(e1.shape() == Shape{64});
    for (int i = 0; i < 64; ++i) CHECK(e1.value()[i] == doctest::Approx(e.value()[i]).epsilon(1e-12));
  }
}

TEST_CASE("six blocks shrink the time axis by exactly six") {
  FeatureExtractorConfig cfg;
  cfg.window = 21;
  CHECK(cfg.flat_time() == 15);
  CHECK(cfg.flat_dim() == 32 * 15);
  ModelState state = init_model(cfg, 1);
  CHECK(param(state, "f.head.weight").shape() == Shape{64, 32 * 15});
}

TEST_CASE("closed-form parameter count matches the actual trainables") {
  for (int w : kDefaultWindows) {
    FeatureExtractorConfig cfg;
    cfg.window = w;
    ModelState state = init_model(cfg, 2);
    CHECK(count_values(trainable_params(state, "f.")) == extractor_param_count(cfg));
  }
  FeatureExtractorConfig cfg;
  CHECK(extractor_param_count(cfg) == 66496);  // w=30, c=14, m=32, latent=64
}

TEST_CASE("decoder inverts the extractor's shape for every default window") {
  std::mt19937_64 rng(23);
  for (int w : kDefaultWindows) {
    FeatureExtractorConfig cfg;
    cfg.window = w;
    ModelState state = init_model(cfg, 7);
    Tensor x = random_frames(rng, 3, cfg);
    Tensor e = feature_extractor_forward(x, state, Mode::eval);
    Tensor r = decoder_forward(e, state, Mode::eval);
    CHECK(r.shape() == x.shape());
  }
}

TEST_CASE("decoder failures name the offending block") {
  FeatureExtractorConfig cfg;
  ModelState state = init_model(cfg, 3);
  state.params.at("dec.tconv3.weight") = Tensor::zeros({5, 5, 3}, true);
  std::mt19937_64 rng(4);
  Tensor e = random_embeddings(rng, 2, cfg.latent);
  try {
    decoder_forward(e, state, Mode::eval);
    FAIL("expected a shape error");
  } catch (const ShapeError& err) {
    CHECK(std::string(err.what()).find("decoder block 3") != std::string::npos);
  }
}

TEST_CASE("siamese distance properties hold over ten thousand pairs") {
  std::mt19937_64 rng(31);
  const double tol = 1e-9;
  for (int i = 0; i < 10000; ++i) {
    Tensor a = random_embeddings(rng, 1, 16);
    Tensor b = random_embeddings(rng, 1, 16);
    const double h = siamese_distance(a, b).value()[0];
    CHECK(h >= -tol);
    CHECK(h <= 4.0 + tol);
    CHECK(std::abs(siamese_distance(a, a).value()[0]) < tol);
  }
  // orthogonal pair -> 2, antipodal pair -> 4
  Tensor u = Tensor::from({4}, (Vec(4) << 3, 0, 0, 0).finished(), false);
  Tensor v = Tensor::from({4}, (Vec(4) << 0, 5, 0, 0).finished(), false);
  Tensor nu = Tensor::from({4}, (Vec(4) << -3, 0, 0, 0).finished(), false);
  CHECK(std::abs(siamese_distance(u, v).item() - 2.0) < tol);
  CHECK(std::abs(siamese_distance(u, nu).item() - 4.0) < tol);
  CHECK(std::abs(siamese_distance(u, u).item()) < tol);
}

TEST_CASE("siamese distance rejects a zero embedding") {
  Tensor z = Tensor::zeros({8}, false);
  Tensor a = Tensor::full({8}, 0.5, false);
  CHECK_THROWS_AS(siamese_distance(z, a), DegenerateInputError);
}

TEST_CASE("head produces one estimate per frame, with and without normalization") {
  FeatureExtractorConfig cfg;
  ModelState state = init_model(cfg, 9);
  std::mt19937_64 rng(10);
  Tensor e = random_embeddings(rng, 5, cfg.latent);
  CHECK(regression_head_forward(e, state, false, Mode::eval).shape() == Shape{5});
  CHECK(regression_head_forward(e, state, true, Mode::eval).shape() == Shape{5});
  Tensor single = random_embeddings(rng, 1, cfg.latent);
  Tensor flat = reshape(single, {cfg.latent});
  CHECK(regression_head_forward(flat, state, false, Mode::eval).ndim() == 0);
}

TEST_CASE("eval forward is deterministic and leaves running statistics alone") {
  FeatureExtractorConfig cfg;
  cfg.dropout = 0.3;
  ModelState state = init_model(cfg, 13);
  std::mt19937_64 rng(14);
  Tensor x = random_frames(rng, 3, cfg);
  Vec rm_before = param(state, "f.bn1.running_mean").value();
  Tensor y1 = predict_rul(x, state, Mode::eval);
  Tensor y2 = predict_rul(x, state, Mode::eval);
  CHECK((y1.value() - y2.value()).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((param(state, "f.bn1.running_mean").value() - rm_before).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("train forward updates running statistics and needs an rng for dropout") {
  FeatureExtractorConfig cfg;
  cfg.dropout = 0.3;
  ModelState state = init_model(cfg, 17);
  std::mt19937_64 rng(18);
  Tensor x = random_frames(rng, 4, cfg);
  CHECK_THROWS_AS(feature_extractor_forward(x, state, Mode::train), ValueError);
  std::mt19937_64 drop_rng(19);
  feature_extractor_forward(x, state, Mode::train, &drop_rng);
  CHECK(param(state, "f.bn1.running_mean").value().cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("training a single frame is rejected as degenerate") {
  FeatureExtractorConfig cfg;
  ModelState state = init_model(cfg, 21);
  std::mt19937_64 rng(22);
  Tensor x = random_frames(rng, 1, cfg);
  CHECK_THROWS_AS(feature_extractor_forward(x, state, Mode::train), DegenerateInputError);
}

TEST_CASE("gradients flow end to end through the predictor") {
  FeatureExtractorConfig cfg;
  cfg.window = 8;
  cfg.in_channels = 3;
  cfg.filters = 4;
  cfg.latent = 5;
  ModelState state = init_model(cfg, 29);
  std::mt19937_64 rng(30);
  Tensor x = random_frames(rng, 3, cfg);
  std::vector<Tensor> leaves;
  for (const auto& [name, t] : trainable_params(state, "f.")) leaves.push_back(t);
  for (const auto& [name, t] : trainable_params(state, "g.")) leaves.push_back(t);
  const Vec weights = (Vec(3) << 0.7, -1.2, 0.4).finished();
  const double err = testutil::max_grad_error(
      [&] { return testutil::weighted_sum(predict_rul(x, state, Mode::eval), weights); }, leaves);
  CHECK(err < 1e-4);
}

TEST_CASE("transfer copies the extractor bit-exactly and re-rolls the head") {
  FeatureExtractorConfig cfg;
  ModelState source = init_model(cfg, 41);
  // Pretend some training happened.
  std::mt19937_64 rng(42);
  for (auto& [name, t] : source.params) {
    if (name.rfind("f.", 0) == 0) {
      std::normal_distribution<double> d(0.0, 0.1);
      for (Eigen::Index i = 0; i < t.value().size(); ++i) t.value()[i] += d(rng);
    }
  }
  source.normalize_before_head = true;
  ModelState tuned = transfer_for_finetune(source, 43);
  CHECK(tuned.normalize_before_head);
  for (const auto& [name, t] : source.params) {
    if (name.rfind("f.", 0) == 0) {
      CHECK((tuned.params.at(name).value() - t.value()).lpNorm<Eigen::Infinity>() == 0.0);
    }
  }
  CHECK((tuned.params.at("g.linear.weight").value() -
         source.params.at("g.linear.weight").value())
            .lpNorm<Eigen::Infinity>() != 0.0);
  // running statistics travel with the extractor
  CHECK((tuned.params.at("f.bn4.running_mean").value() -
         source.params.at("f.bn4.running_mean").value())
            .lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("fingerprints separate architectures and guard loading") {
  FeatureExtractorConfig a;
  FeatureExtractorConfig b = a;
  b.window = 20;
  FeatureExtractorConfig c = a;
  c.filters = 16;
  FeatureExtractorConfig d = a;
  d.latent = 32;
  std::set<std::string> prints = {architecture_fingerprint(a), architecture_fingerprint(b),
                                  architecture_fingerprint(c), architecture_fingerprint(d)};
  CHECK(prints.size() == 4);
  // dropout is training policy, not architecture
  FeatureExtractorConfig e = a;
  e.dropout = 0.4;
  CHECK(architecture_fingerprint(e) == architecture_fingerprint(a));
}

TEST_CASE("model checkpoints round-trip and reject a doctored config") {
  FeatureExtractorConfig cfg;
  cfg.window = 20;
  ModelState state = init_model(cfg, 51);
  state.normalize_before_head = true;
  const auto path = std::filesystem::temp_directory_path() / "rulkit_model_roundtrip.json";
  save_model_state(path, state, {{"note", "roundtrip"}});

  ModelState back = load_model_state(path);
  CHECK(back.config.window == 20);
  CHECK(back.normalize_before_head);
  CHECK(back.init_seed == 51);
  CHECK(back.params.size() == state.params.size());
  for (const auto& [name, t] : state.params) {
    CHECK((back.params.at(name).value() - t.value()).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(back.params.at(name).requires_grad() == t.requires_grad());
  }

  // Doctor the stored window without refreshing the fingerprint.
  std::ifstream in(path);
  nlohmann::json j = nlohmann::json::parse(in);
  in.close();
  j["meta"]["config"]["window"] = 30;
  std::ofstream out(path);
  out << j;
  out.close();
  CHECK_THROWS_AS(load_model_state(path), ValueError);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoints may omit decoder and rbm blocks but not the predictor") {
  FeatureExtractorConfig cfg;
  cfg.window = 15;
  ModelState lean = init_model(cfg, 7);
  for (auto it = lean.params.begin(); it != lean.params.end();) {
    if (it->first.rfind("dec.", 0) == 0 || it->first.rfind("rbm.", 0) == 0)
      it = lean.params.erase(it);
    else
      ++it;
  }
  const auto path = std::filesystem::temp_directory_path() / "rulkit_model_lean.json";
  save_model_state(path, lean);
  ModelState back = load_model_state(path);
  CHECK(back.params.size() == lean.params.size());
  CHECK(back.params.count("dec.tconv1.weight") == 0);

  // The predictor itself stays mandatory.
  ModelState broken = lean;
  broken.params.erase("f.conv1.weight");
  save_model_state(path, broken);
  CHECK_THROWS_AS(load_model_state(path), ValueError);

  // Names outside the layout are rejected.
  ModelState alien = lean;
  alien.params.emplace("f.conv7.weight", Tensor::from({2}, (Vec(2) << 1, 2).finished()));
  save_model_state(path, alien);
  CHECK_THROWS_AS(load_model_state(path), ValueError);
  std::filesystem::remove(path);
}

TEST_CASE("rbm step is a relu response when noise-free") {
  FeatureExtractorConfig cfg;
  cfg.in_channels = 2;
  cfg.filters = 2;
  cfg.window = 8;
  ModelState state = init_model(cfg, 61);
  // Hand-set weights: unit filter on channel 0 taps, negative on channel 1.
  Vec w(2 * 2 * 3);
  w << 1, 1, 1, 0, 0, 0, 0, 0, 0, -1, -1, -1;
  state.params.at("rbm.weight").value() = w;
  state.params.at("rbm.hbias").value() = (Vec(2) << 0.5, 0.0).finished();
  state.params.at("rbm.vbias").value() = Vec::Zero(6);

  Mat patch(1, 6);
  patch << 1, 2, 3, 4, 5, 6;  // channel 0 taps: 1,2,3; channel 1 taps: 4,5,6
  RbmStep step = rbm_energy_step(patch, state, nullptr);
  CHECK(step.hidden_pre(0, 0) == doctest::Approx(6.5));    // 1+2+3+0.5
  CHECK(step.hidden_pre(0, 1) == doctest::Approx(-15.0));  // -(4+5+6)
  CHECK(step.hidden(0, 0) == doctest::Approx(6.5));
  CHECK(step.hidden(0, 1) == 0.0);
  // reconstruction = hidden * W + vbias = 6.5 on channel-0 taps
  for (int k = 0; k < 3; ++k) CHECK(step.visible(0, k) == doctest::Approx(6.5));
  for (int k = 3; k < 6; ++k) CHECK(step.visible(0, k) == 0.0);
}

TEST_CASE("noisy rbm samples stay non-negative and vary") {
  FeatureExtractorConfig cfg;
  cfg.in_channels = 3;
  cfg.window = 9;
  ModelState state = init_model(cfg, 67);
  std::mt19937_64 rng(68);
  std::normal_distribution<double> d(0.0, 1.0);
  Mat v(64, 9);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = d(rng);
  std::mt19937_64 noise_a(1);
  std::mt19937_64 noise_b(2);
  RbmStep sa = rbm_energy_step(v, state, &noise_a);
  RbmStep sb = rbm_energy_step(v, state, &noise_b);
  CHECK(sa.hidden.minCoeff() >= 0.0);
  CHECK((sa.hidden - sb.hidden).lpNorm<Eigen::Infinity>() != 0.0);
  std::mt19937_64 noise_a2(1);
  RbmStep sa2 = rbm_energy_step(v, state, &noise_a2);
  CHECK((sa.hidden - sa2.hidden).lpNorm<Eigen::Infinity>() == 0.0);  // same noise stream
}

TEST_CASE("cd-1 at the origin pulls the visible bias toward the data mean") {
  FeatureExtractorConfig cfg;
  cfg.in_channels = 2;
  cfg.window = 8;
  cfg.filters = 3;
  ModelState state = init_model(cfg, 71);
  state.params.at("rbm.weight").value().setZero();
  state.params.at("rbm.hbias").value().setZero();
  state.params.at("rbm.vbias").value().setZero();
  std::mt19937_64 rng(72);
  std::normal_distribution<double> d(1.0, 0.5);
  Mat v(32, 6);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = d(rng);

  for (auto& [name, t] : state.params) t.zero_grad();
  std::mt19937_64 cd_rng(73);
  rbm_cd1_gradients(v, state, cd_rng);
  // With zero weights nothing reaches the hidden layer or flows back, so the
  // only signal is the visible bias chasing the batch mean.
  CHECK(param(state, "rbm.weight").grad().cwiseAbs().maxCoeff() == 0.0);
  CHECK(param(state, "rbm.hbias").grad().cwiseAbs().maxCoeff() == 0.0);
  Vec want = -v.colwise().mean().transpose();
  for (int i = 0; i < 6; ++i)
    CHECK(param(state, "rbm.vbias").grad()[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("rbm patches unroll every interior window position") {
  Frame f;
  f.engine_id = 1;
  f.end_index = 4;
  f.values = Mat(4, 2);
  f.values << 1, 10, 2, 20, 3, 30, 4, 40;  // [w=4, C=2]
  Mat patches = rbm_patches({f, f});
  CHECK(patches.rows() == 4);  // 2 frames x (4 - 3 + 1 = 2) positions
  CHECK(patches.cols() == 6);
  // first patch: channel 0 taps 1,2,3; channel 1 taps 10,20,30
  CHECK((patches.row(0) - (Eigen::RowVectorXd(6) << 1, 2, 3, 10, 20, 30).finished()).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((patches.row(1) - (Eigen::RowVectorXd(6) << 2, 3, 4, 20, 30, 40).finished()).lpNorm<Eigen::Infinity>() == 0.0);
  CHECK((patches.row(2) - patches.row(0)).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("rbm weight layout matches the first conv block") {
  FeatureExtractorConfig cfg;
  CHECK(param(init_model(cfg, 81), "rbm.weight").shape() ==
        param(init_model(cfg, 81), "f.conv1.weight").shape());
}

}  // TEST_SUITE
