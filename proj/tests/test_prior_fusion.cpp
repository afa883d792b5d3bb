// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "latentview/fusion.hpp"
#include "latentview/prior.hpp"

using namespace latentview;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ToyPriorConfig tiny_prior_config() {
  ToyPriorConfig cfg;
  cfg.latent_shape = {2, 6, 6};
  cfg.width = 8;
  cfg.depth = 1;
  cfg.d_time = 8;
  cfg.batch_size = 8;
  return cfg;
}

LatentGrid<double> smooth_latent(int salt) {
  LatentGrid<double> z({2, 6, 6});
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j)
        z.at(c, i, j) = 0.3 * std::sin(0.4 * i + 0.6 * j + 0.8 * salt + c);
  return z;
}

// A fresh toy prior predicts zero everywhere; nudge the output conv so the
// prediction becomes a nonzero function of the input.
void perturb_output_conv(ToyPrior<double>& prior) {
  auto& ps = prior.params();
  for (int h = 0; h < ps.size(); ++h)
    if (ps.name(h).rfind("out.conv", 0) == 0)
      for (std::size_t i = 0; i < ps.value(h).numel(); ++i)
        ps.value(h)[i] = 0.01 * static_cast<double>(i % 7) - 0.02;
  prior.refresh_id();
}

// Records what it was asked and answers with a constant field.
class SpyPrior : public DiffusionPrior<double> {
 public:
  explicit SpyPrior(double value) : value_(value) {}
  LatentGrid<double> predict_noise(const LatentGrid<double>& z, int t) const override {
    last_input = z;
    last_t = t;
    LatentGrid<double> eps(z.shape());
    eps.fill(value_);
    return eps;
  }
  std::array<int, 3> latent_shape() const override { return {2, 6, 6}; }
  int num_train_steps() const override { return 1000; }
  std::string id() const override { return "spy"; }
  mutable LatentGrid<double> last_input;
  mutable int last_t = -1;

 private:
  double value_;
};

class NanPrior : public DiffusionPrior<double> {
 public:
  LatentGrid<double> predict_noise(const LatentGrid<double>& z, int) const override {
    LatentGrid<double> eps(z.shape());
    eps.fill(std::numeric_limits<double>::quiet_NaN());
    return eps;
  }
  std::array<int, 3> latent_shape() const override { return {2, 6, 6}; }
  int num_train_steps() const override { return 1000; }
  std::string id() const override { return "nan"; }
};

class WrongShapePrior : public DiffusionPrior<double> {
 public:
  LatentGrid<double> predict_noise(const LatentGrid<double>&, int) const override {
    return LatentGrid<double>({1, 2, 2});
  }
  std::array<int, 3> latent_shape() const override { return {2, 6, 6}; }
  int num_train_steps() const override { return 1000; }
  std::string id() const override { return "wrong"; }
};

Image flat_image(float v) {
  Image img({3, 16, 16});
  img.fill(v);
  return img;
}

}  // namespace

// ---------------------------------------------------------------------------
// Toy prior.

TEST_CASE("fresh toy prior predicts exactly zero noise") {
  ToyPrior<double> prior(tiny_prior_config(), 3);
  const auto eps = prior.predict_noise(smooth_latent(0), 500);
  for (std::size_t i = 0; i < eps.numel(); ++i) CHECK(eps[i] == 0.0);
}

TEST_CASE("toy prior is deterministic and its id tracks the weights") {
  ToyPrior<double> a(tiny_prior_config(), 3);
  ToyPrior<double> b(tiny_prior_config(), 3);
  CHECK(a.id() == b.id());
  CHECK(a.id().rfind("toy:", 0) == 0);

  ToyPrior<double> c(tiny_prior_config(), 4);
  CHECK(a.id() != c.id());  // different init seed, different hidden weights

  perturb_output_conv(a);
  CHECK(a.id() != b.id());
  const auto e1 = a.predict_noise(smooth_latent(1), 700);
  const auto e2 = a.predict_noise(smooth_latent(1), 700);
  CHECK(bit_equal(e1, e2));
  CHECK(squared_norm(e1) > 0.0);
}

TEST_CASE("toy prior validates input shape and timestep range") {
  ToyPrior<double> prior(tiny_prior_config());
  CHECK_THROWS_AS(prior.predict_noise(LatentGrid<double>({2, 5, 6}), 500), std::invalid_argument);
  CHECK_THROWS_AS(prior.predict_noise(smooth_latent(0), -1), std::invalid_argument);
  CHECK_THROWS_AS(prior.predict_noise(smooth_latent(0), 1001), std::invalid_argument);
  CHECK_NOTHROW(prior.predict_noise(smooth_latent(0), 0));
  CHECK_NOTHROW(prior.predict_noise(smooth_latent(0), 1000));

  ToyPriorConfig bad = tiny_prior_config();
  bad.d_time = 7;  // must be even
  CHECK_THROWS_AS(ToyPrior<double>(bad), std::invalid_argument);
}

TEST_CASE("toy prior save and load preserve behaviour and identity") {
  TempDir tmp("lv_prior_save");
  ToyPrior<double> prior(tiny_prior_config(), 3);
  perturb_output_conv(prior);
  const std::string path = (tmp.path / "prior.tunc").string();
  prior.save(path);

  const auto loaded = ToyPrior<double>::load(path);
  CHECK(loaded->id() == prior.id());
  CHECK(loaded->latent_shape() == prior.latent_shape());
  const auto z = smooth_latent(2);
  CHECK(bit_equal(loaded->predict_noise(z, 600), prior.predict_noise(z, 600)));

  // Wrong artifact kind is rejected.
  Tensor<double> t({1});
  write_file((tmp.path / "other.tunc").string(),
             serialize_archive<double>({{"kind", "something_else"}}, {{"t", &t}}));
  CHECK_THROWS_AS(ToyPrior<double>::load((tmp.path / "other.tunc").string()), DataError);
}

TEST_CASE("toy prior training needs 100 samples and a matching schedule") {
  const NoiseSchedule schedule = NoiseSchedule::linear();
  std::vector<LatentGrid<double>> few(99, smooth_latent(0));
  CHECK_THROWS_WITH(train_toy_prior(tiny_prior_config(), few, schedule),
                    Catch::Matchers::ContainsSubstring("at least 100"));

  std::vector<LatentGrid<double>> enough(100, smooth_latent(0));
  ToyPriorConfig mismatched = tiny_prior_config();
  mismatched.num_train_steps = 500;
  CHECK_THROWS_AS(train_toy_prior(mismatched, enough, schedule), std::invalid_argument);
}

TEST_CASE("toy prior training reduces the denoising loss") {
  const NoiseSchedule schedule = NoiseSchedule::linear();
  std::vector<LatentGrid<double>> latents;
  for (int i = 0; i < 120; ++i) latents.push_back(smooth_latent(i));

  ToyPriorConfig cfg = tiny_prior_config();
  cfg.train_steps = 300;
  cfg.lr = 2e-3;
  double final_loss = -1.0;
  const auto trained = train_toy_prior(cfg, latents, schedule, &final_loss);
  // The zero-initialized head starts at loss ~1 (predicting no noise); after
  // training the last-batch loss must sit clearly below that.
  CHECK(final_loss < 0.85);
  CHECK(std::isfinite(final_loss));
  CHECK(trained->id().rfind("toy:", 0) == 0);

  // Against a nearly untrained twin, the trained prior wins on a fixed probe set.
  ToyPriorConfig barely = cfg;
  barely.train_steps = 2;
  const auto young = train_toy_prior(barely, latents, schedule);
  auto eng = make_engine(77);
  std::uniform_int_distribution<int> pick_t(300, 900);
  double mse_trained = 0.0, mse_young = 0.0;
  const int probes = 40;
  for (int i = 0; i < probes; ++i) {
    const LatentGrid<double>& z0 = latents[static_cast<std::size_t>(i)];
    const int t = pick_t(eng);
    LatentGrid<double> eps = LatentGrid<double>::randn(z0.shape(), eng);
    LatentGrid<double> x_t = forward_diffuse(z0, t, eps, schedule);
    mse_trained += mean_squared_error(trained->predict_noise(x_t, t), eps);
    mse_young += mean_squared_error(young->predict_noise(x_t, t), eps);
  }
  CHECK(mse_trained / probes < mse_young / probes);
}

// ---------------------------------------------------------------------------
// External backbone adapter.

TEST_CASE("external prior adapter explains a missing artifact") {
  try {
    ExternalPriorAdapter<double> adapter("/nonexistent/backbone.tunc");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("backbone artifact not found") != std::string::npos);
    CHECK(msg.find("no network retrieval") != std::string::npos);
    CHECK(msg.find("kind=backbone") != std::string::npos);
  }
}

TEST_CASE("external prior adapter wraps a backbone artifact transparently") {
  TempDir tmp("lv_backbone");
  ToyPrior<double> prior(tiny_prior_config(), 3);
  perturb_output_conv(prior);
  const std::string path = (tmp.path / "backbone.tunc").string();
  write_backbone_artifact(path, prior, "demo-v1");

  ExternalPriorAdapter<double> adapter(path);
  CHECK(adapter.backbone_id() == "demo-v1");
  CHECK(adapter.id().rfind("external:demo-v1:", 0) == 0);
  CHECK(adapter.latent_shape() == prior.latent_shape());
  CHECK(adapter.num_train_steps() == prior.num_train_steps());
  const auto z = smooth_latent(5);
  CHECK(bit_equal(adapter.predict_noise(z, 640), prior.predict_noise(z, 640)));

  // A saved toy prior works as a local stand-in without re-tagging.
  const std::string toy_path = (tmp.path / "toy.tunc").string();
  prior.save(toy_path);
  ExternalPriorAdapter<double> from_toy(toy_path);
  CHECK(bit_equal(from_toy.predict_noise(z, 640), prior.predict_noise(z, 640)));

  // Any other kind is rejected with the offending kind in the message.
  Tensor<double> t({1});
  write_file((tmp.path / "junk.tunc").string(),
             serialize_archive<double>({{"kind", "tunet_train"}}, {{"t", &t}}));
  CHECK_THROWS_WITH(ExternalPriorAdapter<double>((tmp.path / "junk.tunc").string()),
                    Catch::Matchers::ContainsSubstring("has kind 'tunet_train'"));
}

TEST_CASE("prior predictions are stable under concurrent calls") {
  ToyPrior<double> prior(tiny_prior_config(), 3);
  perturb_output_conv(prior);
  const auto z = smooth_latent(3);
  const auto expected = prior.predict_noise(z, 580);

  std::vector<int> ok(4, 0);
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k)
    threads.emplace_back([&, k] {
      bool all = true;
      for (int rep = 0; rep < 8; ++rep)
        all = all && bit_equal(prior.predict_noise(z, 580), expected);
      ok[static_cast<std::size_t>(k)] = all ? 1 : 0;
    });
  for (auto& t : threads) t.join();
  for (int k = 0; k < 4; ++k) CHECK(ok[static_cast<std::size_t>(k)] == 1);
}

// ---------------------------------------------------------------------------
// Fusion.

TEST_CASE("fusion coefficient follows the configured sign") {
  // One-step schedule with beta = 0.64 puts the cumulative alpha at 0.36.
  const NoiseSchedule s = NoiseSchedule::from_betas({0.64});
  FusionConfig cfg;
  cfg.t_star = 1;
  cfg.sign = CoefficientSign::kMinus;
  CHECK(fusion_coefficient(s, cfg) == Catch::Approx(0.8).margin(1e-15));
  cfg.sign = CoefficientSign::kPlus;
  CHECK(fusion_coefficient(s, cfg) == Catch::Approx(1.1661903789690602).margin(1e-15));

  // Default schedule at the working timestep.
  const NoiseSchedule lin = NoiseSchedule::linear();
  FusionConfig def;
  CHECK(fusion_coefficient(lin, def) == Catch::Approx(0.9869754863099007).margin(1e-14));
}

TEST_CASE("strategy A re-noises the mean and adds the fresh prior estimate") {
  LatentGrid<double> mu_hat = smooth_latent(1);
  LatentGrid<double> sigma_ref = smooth_latent(2);
  SpyPrior spy(0.25);
  const NoiseSchedule s = NoiseSchedule::from_betas({0.64});
  FusionConfig cfg;
  cfg.t_star = 1;
  cfg.sign = CoefficientSign::kMinus;

  const auto out = fuse_strategy_a(mu_hat, sigma_ref, spy, s, cfg);
  CHECK(spy.last_t == 1);
  CHECK(bit_equal(spy.last_input, add(mu_hat, sigma_ref)));  // queried at the re-noised point
  LatentGrid<double> ones({2, 6, 6});
  ones.fill(1.0);
  LatentGrid<double> expected = mu_hat;
  axpy(0.8 * 0.25, ones, expected);
  CHECK(max_abs_diff(out, expected) < 1e-15);

  CHECK_THROWS_AS(fuse_strategy_a(mu_hat, LatentGrid<double>({1, 2, 2}), spy, s, cfg),
                  std::invalid_argument);
  WrongShapePrior wrong;
  CHECK_THROWS_AS(fuse_strategy_a(mu_hat, sigma_ref, wrong, s, cfg), std::invalid_argument);
  NanPrior nan;
  CHECK_THROWS_AS(fuse_strategy_a(mu_hat, sigma_ref, nan, s, cfg), NumericalError);
}

TEST_CASE("strategy B adds the scaled reference latent directly") {
  LatentGrid<double> mu_hat = smooth_latent(1);
  LatentGrid<double> z_ref = smooth_latent(4);
  const NoiseSchedule s = NoiseSchedule::from_betas({0.64});
  FusionConfig cfg;
  cfg.t_star = 1;

  cfg.sign = CoefficientSign::kMinus;
  auto out = fuse_strategy_b(mu_hat, z_ref, s, cfg);
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out[i] == Catch::Approx(mu_hat[i] + 0.8 * z_ref[i]).margin(1e-15));

  cfg.sign = CoefficientSign::kPlus;
  out = fuse_strategy_b(mu_hat, z_ref, s, cfg);
  for (std::size_t i = 0; i < out.numel(); ++i)
    CHECK(out[i] == Catch::Approx(mu_hat[i] + 1.1661903789690602 * z_ref[i]).margin(1e-15));

  CHECK_THROWS_AS(fuse_strategy_b(mu_hat, LatentGrid<double>({1, 2, 2}), s, cfg),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Candidate selection.

TEST_CASE("builtin selector distances are oriented lower-is-better") {
  const Image a = flat_image(0.5f);
  auto mse_fn = MetricRegistry::instance().find("mse");
  auto psnr_fn = MetricRegistry::instance().find("psnr");
  auto ssim_fn = MetricRegistry::instance().find("ssim");
  REQUIRE(mse_fn);
  REQUIRE(psnr_fn);
  REQUIRE(ssim_fn);
  CHECK((*mse_fn)(a, a) == 0.0);
  CHECK((*psnr_fn)(a, a) == -std::numeric_limits<double>::infinity());
  CHECK((*ssim_fn)(a, a) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("select_best picks the closest candidate and keeps earlier ties") {
  Image ref({3, 16, 16});
  for (std::size_t i = 0; i < ref.numel(); ++i)
    ref[i] = 0.5f + 0.3f * static_cast<float>(std::sin(0.37 * static_cast<double>(i)));
  Image close = ref;
  Image far = ref;
  for (std::size_t i = 0; i < far.numel(); ++i)
    far[i] = std::min(1.0f, far[i] + 0.2f * static_cast<float>(i % 3));

  std::vector<Candidate> cands;
  cands.push_back({far, "fusion_b"});
  cands.push_back({close, "fusion_a"});
  CHECK(select_best(cands, ref, "psnr").tag == "fusion_a");
  CHECK(select_best(cands, ref, "mse").tag == "fusion_a");

  std::vector<Candidate> tied;
  tied.push_back({close, "first"});
  tied.push_back({close, "second"});
  CHECK(select_best(tied, ref, "mse").tag == "first");

  CHECK_THROWS_AS(select_best({}, ref, "mse"), std::invalid_argument);
}

TEST_CASE("unknown selectors warn and fall back to psnr") {
  Image ref({3, 16, 16});
  ref.fill(0.25f);
  Image close = ref;
  Image far = ref;
  far.fill(0.9f);
  std::vector<Candidate> cands = {{far, "b"}, {close, "a"}};

  std::ostringstream warn;
  CHECK(select_best(cands, ref, "lpips", &warn).tag == "a");
  CHECK(warn.str() == "[latentview] selector 'lpips' unavailable; falling back to psnr\n");
}

TEST_CASE("registered plugin metrics take part in selection") {
  // A deliberately inverted metric: prefers the candidate farthest from the
  // reference, which proves the plugin, not a builtin, did the ranking.
  MetricRegistry::instance().add("test_inverted", [](const Image& a, const Image& b) {
    return -mean_squared_error(a, b);
  });
  Image ref({3, 16, 16});
  ref.fill(0.25f);
  Image close = ref;
  Image far = ref;
  far.fill(0.9f);
  std::vector<Candidate> cands = {{close, "close"}, {far, "far"}};
  std::ostringstream warn;
  CHECK(select_best(cands, ref, "test_inverted", &warn).tag == "far");
  CHECK(warn.str().empty());
}
