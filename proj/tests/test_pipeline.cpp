// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "latentview/cache.hpp"
#include "latentview/config.hpp"
#include "latentview/pipeline.hpp"
#include "latentview/synthetic.hpp"
#include "latentview/training.hpp"

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

class CountingPrior : public DiffusionPrior<double> {
 public:
  CountingPrior(std::array<int, 3> shape, int steps) : shape_(shape), steps_(steps) {}
  LatentGrid<double> predict_noise(const LatentGrid<double>& z, int) const override {
    ++calls;
    return LatentGrid<double>(z.shape());
  }
  std::array<int, 3> latent_shape() const override { return shape_; }
  int num_train_steps() const override { return steps_; }
  std::string id() const override { return "counting"; }
  mutable long calls = 0;

 private:
  std::array<int, 3> shape_;
  int steps_;
};

TUNetConfig grid16_config() {
  TUNetConfig cfg;
  cfg.in_channels = 4;
  cfg.latent_grid = 16;
  cfg.base_width = 8;
  cfg.channel_mult = {1, 2};
  cfg.res_blocks_per_stage = 1;
  cfg.attn_dim = 16;
  cfg.head_dim = 8;
  cfg.cond.d_cam = 8;
  cfg.cond.d_cls = 8;
  cfg.cond.d_time = 16;
  cfg.cond.num_classes = 4;
  return cfg;
}

Camera rig_camera(double theta) {
  const Eigen::Vector3d eye(2.0 * std::cos(theta), 0.5, 2.0 * std::sin(theta));
  return look_at_camera(eye, Eigen::Vector3d(0, 0, 0), 16, 45.0);
}

Image frame_image(int k) {
  Image img({3, 16, 16});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j)
        img.at(c, i, j) =
            0.5f + 0.4f * static_cast<float>(std::sin(0.3 * i + 0.7 * j + 0.9 * k + 0.4 * c));
  return img;
}

SceneRecord write_tiny_scene(const fs::path& dir, const std::string& id, int class_id,
                             int n_frames, int salt) {
  fs::create_directories(dir);
  SceneRecord s;
  s.scene_id = id;
  s.class_id = class_id;
  for (int k = 1; k <= n_frames; ++k) {
    Frame f;
    f.index = k;
    f.image_path = (dir / (id + "_" + std::to_string(k) + ".png")).string();
    f.camera = rig_camera(0.25 * (k - 1) + 0.01 * salt);
    write_png(f.image_path, frame_image(k + salt));
    s.frames.push_back(f);
  }
  return s;
}

// Everything a synthesis call needs, with identity translation and zero noise.
struct PipelineFixture {
  TUNetConfig model_cfg = grid16_config();
  nn::ParameterStore<double> ps{7};
  TUNet<double> model{ps, model_cfg};
  IdentityCodec<double> codec{16};
  ZeroPrior<double> prior{{4, 16, 16}, 1000};
  NoiseSchedule schedule = NoiseSchedule::linear();
  SynthesisContext<double> ctx;
  FusionConfig fusion;

  PipelineFixture() {
    ctx.model = &model;
    ctx.ps = &ps;
    ctx.model_t_star = 600;
    ctx.prior = &prior;
    ctx.codec = &codec;
    ctx.schedule = &schedule;
    ctx.steps = 3;
    fusion.t_star = 600;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Configuration checks run before any tensor work.

TEST_CASE("synthesis config mismatches reject before the prior is consulted") {
  PipelineFixture fx;
  CountingPrior counting({4, 16, 16}, 1000);
  fx.ctx.prior = &counting;

  FusionConfig wrong_t = fx.fusion;
  wrong_t.t_star = 400;
  CHECK_THROWS_WITH(
      synthesize(frame_image(0), rig_camera(0.0), rig_camera(0.3), 1, fx.ctx, wrong_t),
      Catch::Matchers::ContainsSubstring("t_star mismatch"));
  CHECK(counting.calls == 0);

  CountingPrior other_shape({4, 8, 8}, 1000);
  fx.ctx.prior = &other_shape;
  CHECK_THROWS_WITH(check_synthesis_config(fx.ctx, fx.fusion),
                    Catch::Matchers::ContainsSubstring("latent shape mismatch"));
  CHECK(other_shape.calls == 0);

  CountingPrior short_schedule({4, 16, 16}, 500);
  fx.ctx.prior = &short_schedule;
  CHECK_THROWS_WITH(check_synthesis_config(fx.ctx, fx.fusion),
                    Catch::Matchers::ContainsSubstring("schedule length"));

  // Prior and schedule agree but are too short for the working timestep.
  const NoiseSchedule tiny_sched = NoiseSchedule::from_betas(std::vector<double>(10, 0.01));
  CountingPrior tiny_prior({4, 16, 16}, 10);
  fx.ctx.prior = &tiny_prior;
  fx.ctx.schedule = &tiny_sched;
  CHECK_THROWS_WITH(check_synthesis_config(fx.ctx, fx.fusion),
                    Catch::Matchers::ContainsSubstring("t_star outside the schedule"));

  SynthesisContext<double> incomplete;
  CHECK_THROWS_AS(check_synthesis_config(incomplete, fx.fusion), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Synthesis.

TEST_CASE("synthesize produces both candidates plus the mean-only sample") {
  PipelineFixture fx;
  const Image ref = frame_image(1);
  std::ostringstream warn;
  const SynthesisResult out =
      synthesize(ref, rig_camera(0.0), rig_camera(0.4), 1, fx.ctx, fx.fusion, &warn);

  REQUIRE(out.candidates.size() == 2);
  CHECK(out.candidates[0].tag == "a");
  CHECK(out.candidates[1].tag == "b");
  CHECK(warn.str().empty());

  // Zero prior and identity translation: the mean round-trips to the input,
  // and strategy A adds exactly nothing, so it matches the mean-only sample.
  CHECK(out.mu_only.same_shape(ref));
  CHECK(max_abs_diff(out.mu_only, ref) < 1e-5);
  CHECK(bit_equal(out.candidates[0].image, out.mu_only));
  // Strategy B re-injects the scaled reference latent and lands elsewhere.
  CHECK(max_abs_diff(out.candidates[1].image, out.mu_only) > 1e-3);
  // Selection against the mean-only reference therefore keeps A.
  CHECK(out.tag == "a");
  CHECK(bit_equal(out.image, out.candidates[0].image));
}

TEST_CASE("synthesize respects the single-strategy settings") {
  PipelineFixture fx;
  fx.fusion.strategy = FusionStrategy::kA;
  auto out = synthesize(frame_image(2), rig_camera(0.0), rig_camera(0.4), 1, fx.ctx, fx.fusion);
  REQUIRE(out.candidates.size() == 1);
  CHECK(out.candidates[0].tag == "a");
  CHECK(out.tag == "a");

  fx.fusion.strategy = FusionStrategy::kB;
  out = synthesize(frame_image(2), rig_camera(0.0), rig_camera(0.4), 1, fx.ctx, fx.fusion);
  REQUIRE(out.candidates.size() == 1);
  CHECK(out.tag == "b");
}

TEST_CASE("synthesize is bit-reproducible") {
  PipelineFixture fx;
  const Image ref = frame_image(3);
  const auto a = synthesize(ref, rig_camera(0.1), rig_camera(0.5), 2, fx.ctx, fx.fusion);
  const auto b = synthesize(ref, rig_camera(0.1), rig_camera(0.5), 2, fx.ctx, fx.fusion);
  CHECK(bit_equal(a.image, b.image));
  CHECK(bit_equal(a.mu_only, b.mu_only));
  CHECK(a.tag == b.tag);
  REQUIRE(a.candidates.size() == b.candidates.size());
  for (std::size_t i = 0; i < a.candidates.size(); ++i)
    CHECK(bit_equal(a.candidates[i].image, b.candidates[i].image));
}

// ---------------------------------------------------------------------------
// Evaluation.

TEST_CASE("evaluate reports per-pair rows and matching aggregates") {
  TempDir tmp("lv_eval_test");
  std::vector<SceneRecord> scenes;
  scenes.push_back(write_tiny_scene(tmp.path / "sc_a", "sc_a", 1, 4, 0));
  scenes.push_back(write_tiny_scene(tmp.path / "sc_b", "sc_b", 2, 4, 10));
  scenes.push_back(write_tiny_scene(tmp.path / "sc_short", "sc_short", 1, 2, 20));

  PipelineFixture fx;
  EvalProtocol proto;
  proto.protocol_resize = 12;
  proto.pairs_per_scene = 2;
  proto.seed = 9;
  proto.ranges = PairRanges{1, 2, 3, 4};

  std::ostringstream log;
  const EvalReport report = evaluate(scenes, {"sc_b", "sc_a", "sc_short"}, fx.ctx, fx.fusion,
                                     proto, &log);

  REQUIRE(report.pairs.size() == 4);  // two sufficiently long scenes, two pairs each
  CHECK(report.agg.pairs == 4);
  CHECK(report.agg.skipped == 1);
  CHECK(log.str().find("sc_short") != std::string::npos);
  // Scenes are visited in sorted order regardless of the argument order.
  CHECK(report.pairs[0].scene_id == "sc_a");
  CHECK(report.pairs[2].scene_id == "sc_b");

  double mean_psnr = 0, mean_ssim = 0, mean_proto = 0, mean_copy = 0, mean_mu = 0;
  for (const auto& r : report.pairs) {
    CHECK((r.tag == "a" || r.tag == "b"));
    CHECK(r.ref >= 1);
    CHECK(r.tar >= 3);
    CHECK(std::isfinite(r.ssim_native));
    mean_psnr += r.psnr_native;
    mean_ssim += r.ssim_native;
    mean_proto += r.psnr_protocol;
    mean_copy += r.psnr_copy_ref;
    mean_mu += r.psnr_mu_only;
  }
  mean_psnr /= 4;
  mean_ssim /= 4;
  CHECK(report.agg.mean_psnr == Catch::Approx(mean_psnr).margin(1e-12));
  CHECK(report.agg.mean_ssim == Catch::Approx(mean_ssim).margin(1e-12));
  CHECK(report.agg.mean_psnr_protocol == Catch::Approx(mean_proto / 4).margin(1e-12));
  CHECK(report.agg.mean_psnr_copy_ref == Catch::Approx(mean_copy / 4).margin(1e-12));
  CHECK(report.agg.mean_psnr_mu_only == Catch::Approx(mean_mu / 4).margin(1e-12));

  double var = 0;
  for (const auto& r : report.pairs)
    var += (r.psnr_native - mean_psnr) * (r.psnr_native - mean_psnr);
  CHECK(report.agg.std_psnr == Catch::Approx(std::sqrt(var / 4)).margin(1e-9));

  CHECK(report.metadata.at("codec") == "identity");
  CHECK(report.metadata.at("prior") == "zero");
  CHECK(report.metadata.at("t_star") == 600);
  CHECK(report.metadata.at("protocol_resize") == 12);
}

TEST_CASE("evaluate on no scenes yields an empty report") {
  PipelineFixture fx;
  EvalProtocol proto;
  const EvalReport report =
      evaluate(std::vector<SceneRecord>{}, std::vector<std::string>{}, fx.ctx, fx.fusion, proto);
  CHECK(report.pairs.empty());
  CHECK(report.agg.pairs == 0);
  CHECK(report.agg.mean_psnr == 0.0);
}

TEST_CASE("eval reports serialize to csv and json") {
  EvalReport report;
  PairResult r;
  r.scene_id = "sc_a";
  r.ref = 1;
  r.tar = 3;
  r.tag = "a";
  r.psnr_native = 20.5;
  r.ssim_native = 0.9;
  r.psnr_protocol = 19.0;
  r.ssim_protocol = 0.85;
  r.psnr_copy_ref = 15.0;
  r.psnr_mu_only = 18.0;
  report.pairs.push_back(r);
  r.scene_id = "sc_b";
  r.tag = "b";
  report.pairs.push_back(r);
  finalize_aggregates(report);

  const std::string csv = eval_report_to_csv(report);
  std::istringstream lines(csv);
  std::string line;
  REQUIRE(std::getline(lines, line));
  CHECK(line == "scene_id,ref,tar,tag,psnr,ssim,psnr_protocol,ssim_protocol,psnr_copy_ref,psnr_mu_only");
  REQUIRE(std::getline(lines, line));
  CHECK(line.rfind("sc_a,1,3,a,20.5,0.9,", 0) == 0);

  const nlohmann::json j = eval_report_to_json(report);
  CHECK(j.at("pairs").size() == 2);
  CHECK(j.at("aggregates").at("pairs") == 2);
  CHECK(j.at("aggregates").at("mean_psnr") == Catch::Approx(20.5));
  CHECK(j.at("pairs")[1].at("tag") == "b");

  TempDir tmp("lv_eval_write");
  const std::string jp = (tmp.path / "eval.json").string();
  const std::string cp = (tmp.path / "eval.csv").string();
  write_eval_report(report, jp, cp);
  CHECK(nlohmann::json::parse(read_file(jp)).at("pairs").size() == 2);
  CHECK(read_file(cp) == csv);
}

// ---------------------------------------------------------------------------
// A miniature end-to-end: cache, train, and beat the identity baseline.

TEST_CASE("a short training run beats the identity baseline on held-out pairs") {
  TempDir tmp("lv_e2e_test");
  std::vector<SceneRecord> scenes;
  scenes.push_back(write_tiny_scene(tmp.path / "sc_a", "sc_a", 1, 4, 0));

  IdentityCodec<double> codec(16);
  ZeroPrior<double> prior({4, 16, 16}, 1000);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  auto entries = precompute_inversions<double>(scenes, codec, prior, schedule, 600, 3,
                                               (tmp.path / "cache").string());
  CacheIndex index(entries);

  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 40;
  cfg.steps = 3;
  cfg.seed = 11;
  cfg.checkpoint_every = 100;
  cfg.pairs_per_scene = 4;
  cfg.ranges = PairRanges{1, 2, 3, 4};
  cfg.out_dir = (tmp.path / "run").string();

  SplitResult split;
  split.train = {"sc_a"};
  split.val = {"sc_a"};  // memorization check: val mirrors train
  const auto data = build_pair_dataset<double>(scenes, split, index, cfg,
                                               {"generic", "boxes", "spheres"});
  REQUIRE(data.train.size() == 4);

  nn::ParameterStore<double> ps(cfg.seed);
  TUNet<double> net(ps, grid16_config());
  const double baseline = identity_baseline_mse(data.val);
  CHECK(baseline > 0.0);
  // The untrained zero-head model scores exactly the identity baseline.
  CHECK(val_mse(net, ps, data.val, cfg.t_star) == Catch::Approx(baseline).margin(1e-12));

  const TrainResult result = train_loop(cfg, net, ps, data);
  CHECK(result.best_val < baseline);
  CHECK(result.epochs.back().mean_loss < result.epochs.front().mean_loss);
}

// ---------------------------------------------------------------------------
// Key=value configs.

TEST_CASE("key=value parsing handles comments, blanks, and errors") {
  const auto cfg = KeyValueConfig::parse(
      "seed = 7\n"
      "# full-line comment\n"
      "\n"
      "  cache_dir=  /tmp/c  \n"
      "epochs = 12  # trailing comment\n");
  REQUIRE(cfg.entries().size() == 3);
  CHECK(cfg.entries().at("seed") == "7");
  CHECK(cfg.entries().at("cache_dir") == "/tmp/c");
  CHECK(cfg.entries().at("epochs") == "12");

  CHECK_THROWS_WITH(KeyValueConfig::parse("this line has no equals"),
                    Catch::Matchers::ContainsSubstring("line 1"));
  CHECK_THROWS_AS(KeyValueConfig::parse("= orphan value"), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse_file("/nonexistent/config"), ConfigError);
}

TEST_CASE("app config presets mirror the training presets") {
  const AppConfig desk = AppConfig::with_preset("desk");
  CHECK(desk.batch_size == 8);
  CHECK(desk.learning_rate == 3e-4);
  CHECK(desk.epochs == 50);
  CHECK(desk.pairs_per_scene == 6);
  CHECK(desk.image_size == 128);
  CHECK(desk.num_scenes == 50);
  CHECK(desk.frames_per_scene == 30);

  const AppConfig paper = AppConfig::with_preset("paper");
  CHECK(paper.batch_size == 32);
  CHECK(paper.learning_rate == 1e-5);
  CHECK(paper.epochs == 450);
  CHECK(paper.pairs_per_scene == 20);
  CHECK(paper.image_size == 512);

  CHECK_THROWS_WITH(AppConfig::with_preset("laptop"),
                    Catch::Matchers::ContainsSubstring("unknown preset"));
}

TEST_CASE("config files override presets key by key") {
  AppConfig cfg = AppConfig::with_preset("desk");
  cfg.apply_file(KeyValueConfig::parse("batch_size = 4\nlearning_rate = 1e-4\nselector = ssim\n"));
  CHECK(cfg.batch_size == 4);
  CHECK(cfg.learning_rate == 1e-4);
  CHECK(cfg.selector == "ssim");
  CHECK(cfg.epochs == 50);  // untouched desk value

  // A preset named inside the file resets the training block before later keys.
  AppConfig swapped = AppConfig::with_preset("desk");
  swapped.apply_file(KeyValueConfig::parse("preset = paper\nbatch_size = 16\n"));
  CHECK(swapped.preset == "paper");
  CHECK(swapped.batch_size == 16);
  CHECK(swapped.epochs == 450);

  CHECK_THROWS_WITH(cfg.apply_file(KeyValueConfig::parse("no_such_key = 1\n")),
                    Catch::Matchers::ContainsSubstring("unknown config key"));
  CHECK_THROWS_WITH(cfg.apply_file(KeyValueConfig::parse("epochs = twelve\n")),
                    Catch::Matchers::ContainsSubstring("expected integer"));
  CHECK_THROWS_WITH(cfg.apply_file(KeyValueConfig::parse("learning_rate = 1.2.3\n")),
                    Catch::Matchers::ContainsSubstring("expected number"));
}

TEST_CASE("app config materializes training and fusion configs") {
  AppConfig cfg = AppConfig::with_preset("desk");
  cfg.seed = 3;
  cfg.ref_lo = 2;
  cfg.ref_hi = 5;
  cfg.tar_lo = 7;
  cfg.tar_hi = 9;
  cfg.out_dir = "runs/x";
  const TrainConfig t = cfg.train_config();
  CHECK(t.batch_size == 8);
  CHECK(t.seed == 3);
  CHECK(t.ranges.ref_lo == 2);
  CHECK(t.ranges.ref_hi == 5);
  CHECK(t.ranges.tar_lo == 7);
  CHECK(t.ranges.tar_hi == 9);
  CHECK(t.out_dir == "runs/x");

  cfg.strategy = "a";
  cfg.coefficient_sign = "plus";
  cfg.selector = "mse";
  cfg.t_star = 500;
  const FusionConfig f = cfg.fusion_config();
  CHECK(f.strategy == FusionStrategy::kA);
  CHECK(f.sign == CoefficientSign::kPlus);
  CHECK(f.selector == "mse");
  CHECK(f.t_star == 500);

  cfg.strategy = "c";
  CHECK_THROWS_AS(cfg.fusion_config(), ConfigError);
  cfg.strategy = "both";
  cfg.coefficient_sign = "maybe";
  CHECK_THROWS_AS(cfg.fusion_config(), ConfigError);

  cfg.coefficient_sign = "minus";
  cfg.batch_size = 0;  // train_config revalidates
  CHECK_THROWS_AS(cfg.train_config(), std::invalid_argument);
}
