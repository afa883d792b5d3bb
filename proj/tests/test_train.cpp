// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latentview/cache.hpp"
#include "latentview/checkpoint.hpp"
#include "latentview/codec.hpp"
#include "latentview/optim.hpp"
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

// Zero noise, but counts evaluations so cache hits are observable.
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

TUNetConfig tiny_config() {
  TUNetConfig cfg;
  cfg.in_channels = 4;
  cfg.latent_grid = 8;
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
  return look_at_camera(eye, Eigen::Vector3d(0, 0, 0), 8, 45.0);
}

Image frame_image(int k) {
  Image img({3, 8, 8});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        img.at(c, i, j) =
            0.5f + 0.4f * static_cast<float>(std::sin(0.3 * i + 0.7 * j + 0.9 * k + 0.4 * c));
  return img;
}

// Writes a scene of 8x8 frames to disk and returns its record.
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

InvertedLatent<double> const_latent(double mu_val, double sigma_val) {
  InvertedLatent<double> inv;
  inv.mu = LatentGrid<double>({4, 8, 8});
  inv.sigma = LatentGrid<double>({4, 8, 8});
  inv.mu.fill(mu_val);
  inv.sigma.fill(sigma_val);
  inv.z = add(inv.mu, inv.sigma);
  inv.t_star = 600;
  inv.steps = 30;
  return inv;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam and the LR schedule.

TEST_CASE("adam reproduces a hand-stepped scalar trajectory") {
  nn::ParameterStore<double> ps(0);
  const int h = ps.add("p", {1}, nn::Init::kZero);
  ps.value(h)[0] = 1.0;
  Adam<double> opt(ps);
  // Constant gradient 0.5, lr 0.1: p should reach these values step by step.
  const double expect[3] = {0.900000002, 0.8000000040000006, 0.7000000060000006};
  for (int step = 0; step < 3; ++step) {
    ps.grad(h)[0] = 0.5;
    const double gnorm = opt.step(ps, 0.1);
    CHECK(gnorm == Catch::Approx(0.5).margin(1e-15));
    CHECK(ps.value(h)[0] == Catch::Approx(expect[step]).margin(1e-14));
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("adam clips gradients by global norm and reports the pre-clip norm") {
  nn::ParameterStore<double> ps(0);
  const int h = ps.add("p", {2}, nn::Init::kZero);
  Adam<double> opt(ps);
  ps.grad(h)[0] = 3.0;
  ps.grad(h)[1] = 4.0;
  const double gnorm = opt.step(ps, 0.0);  // lr 0 so only the clip is observable
  CHECK(gnorm == Catch::Approx(5.0).margin(1e-12));
  CHECK(ps.grad(h)[0] == Catch::Approx(0.6).margin(1e-12));
  CHECK(ps.grad(h)[1] == Catch::Approx(0.8).margin(1e-12));

  AdamConfig nc;
  nc.clip_norm = 0.0;  // disabled
  Adam<double> raw(ps, nc);
  ps.grad(h)[0] = 3.0;
  ps.grad(h)[1] = 4.0;
  raw.step(ps, 0.0);
  CHECK(ps.grad(h)[0] == 3.0);
  CHECK(ps.grad(h)[1] == 4.0);
}

TEST_CASE("adam rejects a store it was not built for") {
  nn::ParameterStore<double> a(0), b(0);
  a.add("p", {1}, nn::Init::kZero);
  b.add("p", {1}, nn::Init::kZero);
  b.add("q", {1}, nn::Init::kZero);
  Adam<double> opt(a);
  CHECK_THROWS_AS(opt.step(b, 0.1), std::invalid_argument);
}

TEST_CASE("cyclic lr starts at the peak and dips to a tenth mid-cycle") {
  // 450 epochs: period 45, floor 1e-6.
  CHECK(cyclic_lr(1e-5, 0, 450) == Catch::Approx(1e-5).margin(1e-20));
  CHECK(cyclic_lr(1e-5, 22, 450) == Catch::Approx(1.2000000000000004e-06).margin(1e-18));
  CHECK(cyclic_lr(1e-5, 23, 450) == Catch::Approx(1.1999999999999995e-06).margin(1e-18));
  CHECK(cyclic_lr(1e-5, 44, 450) == Catch::Approx(9.6e-06).margin(1e-18));
  CHECK(cyclic_lr(1e-5, 45, 450) == Catch::Approx(1e-5).margin(1e-20));  // wraps to a new cycle
  // Fewer than 10 epochs: period clamps to 1, every epoch sits at the peak.
  for (int e = 0; e < 4; ++e) CHECK(cyclic_lr(3e-4, e, 4) == Catch::Approx(3e-4).margin(1e-18));
  CHECK_THROWS_AS(cyclic_lr(0.0, 0, 10), std::invalid_argument);
  CHECK_THROWS_AS(cyclic_lr(1e-5, -1, 10), std::invalid_argument);
  CHECK_THROWS_AS(cyclic_lr(1e-5, 0, 0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Configs.

TEST_CASE("train config presets carry the documented hyperparameters") {
  const TrainConfig p = TrainConfig::paper();
  CHECK(p.batch_size == 32);
  CHECK(p.learning_rate == 1e-5);
  CHECK(p.epochs == 450);
  CHECK(p.pairs_per_scene == 20);
  CHECK(p.t_star == 600);
  CHECK(p.steps == 30);
  CHECK(p.generic_substitution == 0.1);
  CHECK(p.checkpoint_every == 10);

  const TrainConfig d = TrainConfig::desk();
  CHECK(d.batch_size == 8);
  CHECK(d.learning_rate == 3e-4);
  CHECK(d.epochs == 50);
  CHECK(d.pairs_per_scene == 6);
  CHECK(d.t_star == 600);
  CHECK(d.steps == 30);
}

TEST_CASE("train config validation rejects bad fields") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.generic_substitution = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.ranges.ref_lo = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("model config survives a json round trip including head init") {
  TUNetConfig cfg = tiny_config();
  cfg.head_init = TUNetConfig::HeadInit::kRandom;
  const nlohmann::json j = tunet_config_to_json(cfg);
  const TUNetConfig back = tunet_config_from_json(j);
  CHECK(tunet_config_to_json(back) == j);
  CHECK(back.head_init == TUNetConfig::HeadInit::kRandom);

  nlohmann::json missing = j;
  missing.erase("attn_dim");
  CHECK_THROWS_AS(tunet_config_from_json(missing), DataError);
  CHECK_THROWS_WITH(tunet_config_from_json(missing),
                    Catch::Matchers::ContainsSubstring("model config"));
}

// ---------------------------------------------------------------------------
// Named-tensor archives.

TEST_CASE("archive round trips metadata and tensors bit-exactly") {
  Tensor<double> a({2, 2}), b({3});
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = 0.25 * static_cast<double>(i) - 1.0;
  for (std::size_t i = 0; i < b.numel(); ++i) b[i] = std::pow(-1.5, static_cast<double>(i));
  nlohmann::json meta;
  meta["kind"] = "demo";
  meta["note"] = 7;

  const std::string bytes = serialize_archive<double>(meta, {{"w.a", &a}, {"w.b", &b}});
  auto [header, tensors] = deserialize_archive<double>(bytes);
  CHECK(header.at("kind") == "demo");
  CHECK(header.at("note") == 7);
  CHECK_FALSE(header.contains("tensors"));
  REQUIRE(tensors.count("w.a") == 1);
  REQUIRE(tensors.count("w.b") == 1);
  CHECK(bit_equal(tensors.at("w.a"), a));
  CHECK(bit_equal(tensors.at("w.b"), b));
}

TEST_CASE("archive rejects corruption") {
  Tensor<double> a({2});
  a[0] = 1.0;
  a[1] = 2.0;
  const std::string good = serialize_archive<double>({{"kind", "demo"}}, {{"a", &a}});

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_archive<double>(bad_magic), DataError);

  std::string bad_version = good;
  bad_version[4] = static_cast<char>(9);
  CHECK_THROWS_AS(deserialize_archive<double>(bad_version), DataError);

  const std::string truncated = good.substr(0, good.size() - 4);
  CHECK_THROWS_AS(deserialize_archive<double>(truncated), DataError);

  CHECK_THROWS_AS(deserialize_archive<double>(std::string("TU")), DataError);
  // Written as f64, read back as f32.
  CHECK_THROWS_AS(deserialize_archive<float>(good), DataError);
}

TEST_CASE("load_into_store matches names and shapes") {
  nn::ParameterStore<double> ps(3);
  const int h = ps.add("layer.w", {2, 2}, nn::Init::kNormal02);
  Tensor<double> replacement({2, 2});
  replacement.fill(0.5);
  std::map<std::string, Tensor<double>> tensors;
  tensors.emplace("layer.w", replacement);
  load_into_store(tensors, ps);
  CHECK(bit_equal(ps.value(h), replacement));

  std::map<std::string, Tensor<double>> missing;
  CHECK_THROWS_AS(load_into_store(missing, ps), DataError);

  std::map<std::string, Tensor<double>> wrong_shape;
  wrong_shape.emplace("layer.w", Tensor<double>({3}));
  CHECK_THROWS_AS(load_into_store(wrong_shape, ps), DataError);
}

// ---------------------------------------------------------------------------
// Inversion cache.

TEST_CASE("cache keys separate every input that affects the result") {
  const std::string k0 = cache_key("img-bytes", "orthopatch8", "zero", 600, 30);
  CHECK(k0.size() == 64);
  CHECK(k0 == cache_key("img-bytes", "orthopatch8", "zero", 600, 30));
  CHECK(k0 != cache_key("img-bytez", "orthopatch8", "zero", 600, 30));
  CHECK(k0 != cache_key("img-bytes", "identity", "zero", 600, 30));
  CHECK(k0 != cache_key("img-bytes", "orthopatch8", "toy", 600, 30));
  CHECK(k0 != cache_key("img-bytes", "orthopatch8", "zero", 400, 30));
  CHECK(k0 != cache_key("img-bytes", "orthopatch8", "zero", 600, 7));
}

TEST_CASE("cache manifest round trips and rejects non-arrays") {
  std::vector<CacheEntry> entries(2);
  entries[0] = {"k0", "/tmp/k0.invl", "scene_a", 1, 600, 30};
  entries[1] = {"k1", "/tmp/k1.invl", "scene_b", 3, 600, 7};
  const auto back = manifest_from_json(manifest_to_json(entries));
  REQUIRE(back.size() == 2);
  CHECK(back[0].key == "k0");
  CHECK(back[1].scene_id == "scene_b");
  CHECK(back[1].frame == 3);
  CHECK(back[1].steps == 7);
  CHECK_THROWS_AS(manifest_from_json(nlohmann::json::object()), DataError);
}

TEST_CASE("precompute is idempotent and recomputes only corrupt entries") {
  TempDir tmp("lv_cache_test");
  std::vector<SceneRecord> scenes;
  scenes.push_back(write_tiny_scene(tmp.path / "sc_a", "sc_a", 1, 3, 0));
  scenes.push_back(write_tiny_scene(tmp.path / "sc_b", "sc_b", 1, 3, 10));

  IdentityCodec<double> codec(8);
  CountingPrior prior({4, 8, 8}, 1000);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  const std::string cache_dir = (tmp.path / "cache").string();

  auto entries = precompute_inversions<double>(scenes, codec, prior, schedule, 600, 3, cache_dir);
  REQUIRE(entries.size() == 6);
  CHECK(prior.calls == 18);  // 6 frames x 3 inversion steps
  for (const auto& e : entries) {
    CHECK(fs::exists(e.path));
    CHECK(e.t_star == 600);
    CHECK(e.steps == 3);
  }
  // Manifest on disk matches what was returned.
  const auto manifest =
      manifest_from_json(nlohmann::json::parse(read_file(cache_dir + "/manifest.json")));
  REQUIRE(manifest.size() == 6);
  CHECK(manifest[0].key == entries[0].key);
  CHECK(manifest[5].scene_id == "sc_b");

  // Second run: everything cached, the prior is never consulted.
  prior.calls = 0;
  auto again = precompute_inversions<double>(scenes, codec, prior, schedule, 600, 3, cache_dir);
  CHECK(prior.calls == 0);
  REQUIRE(again.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(again[i].key == entries[i].key);

  // Corrupt one entry: only that frame is recomputed.
  write_file(entries[2].path, "garbage");
  prior.calls = 0;
  std::ostringstream log;
  auto third = precompute_inversions<double>(scenes, codec, prior, schedule, 600, 3, cache_dir, &log);
  CHECK(prior.calls == 3);
  CHECK(log.str().find("corrupt entry") != std::string::npos);
  // The recomputed file is valid again.
  CHECK_NOTHROW(deserialize_inverted_latent<double>(read_file(third[2].path)));
}

TEST_CASE("cache index maps scene and frame to the stored latent") {
  TempDir tmp("lv_cache_index");
  std::vector<SceneRecord> scenes;
  scenes.push_back(write_tiny_scene(tmp.path / "sc_a", "sc_a", 1, 2, 0));
  IdentityCodec<double> codec(8);
  ZeroPrior<double> prior({4, 8, 8}, 1000);
  const NoiseSchedule schedule = NoiseSchedule::linear();
  auto entries = precompute_inversions<double>(scenes, codec, prior, schedule, 600, 3,
                                               (tmp.path / "cache").string());
  CacheIndex index(entries);
  CHECK(index.size() == 2);
  CHECK(index.path("sc_a", 1) == entries[0].path);
  CHECK_THROWS_AS(index.path("sc_a", 9), DataError);
  CHECK_THROWS_AS(index.path("nope", 1), DataError);

  const auto inv = index.load<double>("sc_a", 2);
  const auto direct = deserialize_inverted_latent<double>(read_file(entries[1].path));
  CHECK(bit_equal(inv.mu, direct.mu));
  CHECK(bit_equal(inv.sigma, direct.sigma));
}

// ---------------------------------------------------------------------------
// Loss pieces.

TEST_CASE("pair loss is zero on a self pair and exact on a constructed pair") {
  const TUNetConfig cfg = tiny_config();  // zero head: forward is the identity
  nn::ParameterStore<double> ps(11);
  TUNet<double> net(ps, cfg);

  const auto zeros = const_latent(0.0, 0.0);
  const auto ones = const_latent(1.0, 0.0);
  PairItem<double> self;
  self.ref = &zeros;
  self.tar = &zeros;
  self.cam_ref = rig_camera(0.0);
  self.cam_tar = rig_camera(0.3);
  self.class_id = 1;
  CHECK(pair_loss_grad(net, ps, self, 1, 600, 0.0) == 0.0);

  PairItem<double> unit = self;
  unit.tar = &ones;  // identity forward leaves mu at zero, so mse is exactly 1
  CHECK(pair_loss_grad(net, ps, unit, 1, 600, 0.0) == 1.0);

  std::vector<BatchSample<double>> batch = {{&self, 1}, {&unit, 1}};
  CHECK(batch_loss(net, ps, batch, 600) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("identity baseline averages the raw mean gap") {
  const auto zeros = const_latent(0.0, 0.0);
  const auto halves = const_latent(0.5, 0.0);
  PairItem<double> a;
  a.ref = &zeros;
  a.tar = &halves;
  PairItem<double> b;
  b.ref = &halves;
  b.tar = &halves;
  CHECK(identity_baseline_mse<double>({a, b}) == Catch::Approx(0.125).margin(1e-15));
  CHECK(std::isnan(identity_baseline_mse<double>({})));
}

TEST_CASE("val mse is nan on an empty split") {
  const TUNetConfig cfg = tiny_config();
  nn::ParameterStore<double> ps(11);
  TUNet<double> net(ps, cfg);
  CHECK(std::isnan(val_mse(net, ps, std::vector<PairItem<double>>{}, 600)));
}

TEST_CASE("train_step reports the offending pairs on a non-finite loss") {
  const TUNetConfig cfg = tiny_config();
  nn::ParameterStore<double> ps(11);
  TUNet<double> net(ps, cfg);
  Adam<double> opt(ps);

  const auto good = const_latent(0.0, 0.0);
  auto bad = const_latent(0.0, 0.0);
  bad.mu[0] = std::numeric_limits<double>::infinity();
  PairItem<double> item;
  item.ref = &good;
  item.tar = &bad;
  item.cam_ref = rig_camera(0.0);
  item.cam_tar = rig_camera(0.3);
  item.class_id = 1;
  item.scene_id = "sc_x";
  item.ref_index = 1;
  item.tar_index = 2;
  std::vector<BatchSample<double>> batch = {{&item, 1}};
  try {
    train_step(net, ps, opt, batch, 600, 1e-4);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("sc_x:1->2") != std::string::npos);
    CHECK(msg.find("parameter norm") != std::string::npos);
  }
  CHECK_THROWS_AS(train_step(net, ps, opt, std::vector<BatchSample<double>>{}, 600, 1e-4),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Checkpoints.

TEST_CASE("train checkpoint reloads parameters, moments, and bookkeeping") {
  TempDir tmp("lv_ckpt_test");
  TUNetConfig cfg = tiny_config();
  cfg.head_init = TUNetConfig::HeadInit::kRandom;
  nn::ParameterStore<double> ps(21);
  TUNet<double> net(ps, cfg);
  Adam<double> opt(ps);

  // Two synthetic optimizer steps to make the moments non-trivial.
  auto eng = make_engine(99);
  for (int s = 0; s < 2; ++s) {
    for (int h = 0; h < ps.size(); ++h) ps.grad(h) = Tensor<double>::randn(ps.shape(h), eng);
    opt.step(ps, 1e-3);
  }

  const TrainConfig tc = TrainConfig::desk();
  const std::string path = (tmp.path / "ck.tunc").string();
  const std::vector<std::string> vocab = {"generic", "mix"};
  save_train_checkpoint(path, net, ps, opt, tc, 7, 21, 0.125, vocab);

  nn::ParameterStore<double> ps2(5);  // different seed: different init, must be overwritten
  TUNet<double> net2(ps2, cfg);
  Adam<double> opt2(ps2);
  const ResumeState st = load_train_checkpoint(path, net2, ps2, opt2);
  CHECK(st.epoch == 7);
  CHECK(st.global_step == 21);
  CHECK(st.best_val == 0.125);
  CHECK(st.meta.at("classes").get<std::vector<std::string>>() == vocab);
  CHECK(opt2.step_count() == 2);
  for (int h = 0; h < ps.size(); ++h) {
    CHECK(bit_equal(ps2.value(h), ps.value(h)));
    CHECK(bit_equal(opt2.first_moments()[static_cast<std::size_t>(h)],
                    opt.first_moments()[static_cast<std::size_t>(h)]));
    CHECK(bit_equal(opt2.second_moments()[static_cast<std::size_t>(h)],
                    opt.second_moments()[static_cast<std::size_t>(h)]));
  }
}

TEST_CASE("resume refuses a mismatched model or a missing file") {
  TempDir tmp("lv_ckpt_refuse");
  TUNetConfig cfg = tiny_config();
  nn::ParameterStore<double> ps(3);
  TUNet<double> net(ps, cfg);
  Adam<double> opt(ps);
  const std::string path = (tmp.path / "ck.tunc").string();
  save_train_checkpoint(path, net, ps, opt, TrainConfig::desk(), 0, 1, 1.0, {"generic"});

  TUNetConfig other = tiny_config();
  other.base_width = 16;
  nn::ParameterStore<double> ps3(3);
  TUNet<double> net3(ps3, other);
  Adam<double> opt3(ps3);
  CHECK_THROWS_WITH(load_train_checkpoint(path, net3, ps3, opt3),
                    Catch::Matchers::ContainsSubstring("refusing to resume from"));

  Adam<double> opt4(ps);
  CHECK_THROWS_AS(load_train_checkpoint((tmp.path / "absent.tunc").string(), net, ps, opt4),
                  DataError);
}

// ---------------------------------------------------------------------------
// Pair dataset and the loop.

namespace {

struct LoopFixture {
  TempDir tmp;
  std::vector<SceneRecord> scenes;
  SplitResult split;
  std::vector<CacheEntry> entries;
  TrainConfig cfg;
  std::vector<std::string> vocab = {"generic", "boxes", "spheres"};

  explicit LoopFixture(const std::string& tag) : tmp(tag) {
    scenes.push_back(write_tiny_scene(tmp.path / "sc_a", "sc_a", 1, 4, 0));
    scenes.push_back(write_tiny_scene(tmp.path / "sc_b", "sc_b", 2, 4, 10));
    split.train = {"sc_a"};
    split.val = {"sc_b"};

    IdentityCodec<double> codec(8);
    ZeroPrior<double> prior({4, 8, 8}, 1000);
    entries = precompute_inversions<double>(scenes, codec, prior, NoiseSchedule::linear(), 600, 3,
                                            (tmp.path / "cache").string());

    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 4;
    cfg.t_star = 600;
    cfg.steps = 3;
    cfg.seed = 5;
    cfg.checkpoint_every = 2;
    cfg.pairs_per_scene = 4;
    cfg.ranges.ref_lo = 1;
    cfg.ranges.ref_hi = 2;
    cfg.ranges.tar_lo = 3;
    cfg.ranges.tar_hi = 4;
  }

  PairDataset<double> dataset() const {
    CacheIndex index(entries);
    return build_pair_dataset<double>(scenes, split, index, cfg, vocab);
  }
};

}  // namespace

TEST_CASE("pair dataset shares latents between pairs and records skips") {
  LoopFixture fx("lv_pairs_test");
  const auto data = fx.dataset();
  REQUIRE(data.train.size() == 4);  // {1,2} x {3,4}
  REQUIRE(data.val.size() == 4);
  CHECK(data.skipped.empty());
  CHECK(data.class_vocab == fx.vocab);
  CHECK(data.storage.size() == 8);  // 4 distinct frames per scene, loaded once each

  // Pairs that reuse a frame point at the same latent.
  const InvertedLatent<double>* seen = nullptr;
  for (const auto& item : data.train)
    if (item.ref_index == 1) {
      if (!seen) seen = item.ref;
      CHECK(item.ref == seen);
    }
  for (const auto& item : data.train) {
    CHECK(item.class_id == 1);
    CHECK(item.scene_id == "sc_a");
  }

  // A scene too short for the ranges is skipped with a log line.
  LoopFixture shorty("lv_pairs_short");
  shorty.scenes[0] = write_tiny_scene(shorty.tmp.path / "sc_c", "sc_c", 1, 2, 0);
  shorty.scenes[0].scene_id = "sc_c";
  shorty.split.train = {"sc_c", "sc_b"};
  shorty.split.val = {};
  IdentityCodec<double> codec(8);
  ZeroPrior<double> prior({4, 8, 8}, 1000);
  shorty.entries = precompute_inversions<double>(shorty.scenes, codec, prior,
                                                 NoiseSchedule::linear(), 600, 3,
                                                 (shorty.tmp.path / "cache2").string());
  std::ostringstream log;
  CacheIndex index(shorty.entries);
  const auto short_data =
      build_pair_dataset<double>(shorty.scenes, shorty.split, index, shorty.cfg, shorty.vocab, &log);
  REQUIRE(short_data.skipped.size() == 1);
  CHECK(short_data.skipped[0] == "sc_c");
  CHECK(short_data.train.size() == 4);  // only sc_b contributes
  CHECK(log.str().find("too short") != std::string::npos);
}

TEST_CASE("train loop writes metrics, run metadata, and checkpoints") {
  LoopFixture fx("lv_loop_test");
  const auto data = fx.dataset();
  TrainConfig cfg = fx.cfg;
  cfg.out_dir = (fx.tmp.path / "runA").string();

  nn::ParameterStore<double> ps(cfg.seed);
  TUNet<double> net(ps, tiny_config());
  const TrainResult result = train_loop(cfg, net, ps, data);

  REQUIRE(result.epochs.size() == 4);
  REQUIRE(result.step_losses.size() == 8);  // 4 pairs / batch 2 = 2 steps per epoch
  for (double l : result.step_losses) CHECK(std::isfinite(l));
  for (const auto& es : result.epochs) {
    CHECK(std::isfinite(es.val));  // val split is non-empty
    CHECK(es.lr == Catch::Approx(cfg.learning_rate));
  }
  CHECK(result.best_epoch >= 0);
  CHECK(std::isfinite(result.best_val));

  const auto lines = read_lines((fs::path(cfg.out_dir) / "metrics.csv").string());
  REQUIRE(lines.size() == 9);
  CHECK(lines[0] == "epoch,step,loss,lr,wall_time");
  CHECK(lines[1].rfind("0,1,", 0) == 0);
  CHECK(lines[8].rfind("3,8,", 0) == 0);

  const auto run = nlohmann::json::parse(read_file((fs::path(cfg.out_dir) / "run.json").string()));
  CHECK(run.at("train_pairs") == 4);
  CHECK(run.at("val_pairs") == 4);
  CHECK(run.at("skipped_scenes").empty());
  CHECK(run.at("model").at("base_width") == 8);

  CHECK(fs::exists(result.best_path));
  CHECK(fs::exists(result.last_path));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "epoch_0001.tunc"));
  CHECK(fs::exists(fs::path(cfg.out_dir) / "epoch_0003.tunc"));
  CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / "epoch_0000.tunc"));
  CHECK_FALSE(fs::exists(fs::path(cfg.out_dir) / "epoch_0002.tunc"));
}

TEST_CASE("resuming mid-run reproduces the uninterrupted run bit for bit") {
  LoopFixture fx("lv_resume_test");
  const auto data = fx.dataset();

  // Uninterrupted: 4 epochs.
  TrainConfig cfg_full = fx.cfg;
  cfg_full.out_dir = (fx.tmp.path / "full").string();
  nn::ParameterStore<double> ps_full(cfg_full.seed);
  TUNet<double> net_full(ps_full, tiny_config());
  const TrainResult full = train_loop(cfg_full, net_full, ps_full, data);

  // Interrupted: 2 epochs, then resume from last.tunc for the remaining 2.
  TrainConfig cfg_half = fx.cfg;
  cfg_half.epochs = 2;
  cfg_half.out_dir = (fx.tmp.path / "half").string();
  nn::ParameterStore<double> ps_half(cfg_half.seed);
  TUNet<double> net_half(ps_half, tiny_config());
  const TrainResult part1 = train_loop(cfg_half, net_half, ps_half, data);
  REQUIRE(part1.epochs.size() == 2);

  TrainConfig cfg_rest = fx.cfg;  // epochs back to 4
  cfg_rest.out_dir = cfg_half.out_dir;
  const TrainResult part2 =
      train_loop(cfg_rest, net_half, ps_half, data, nullptr, part1.last_path);
  REQUIRE(part2.epochs.size() == 2);
  CHECK(part2.epochs[0].epoch == 2);
  CHECK(part2.epochs[1].epoch == 3);

  for (int h = 0; h < ps_full.size(); ++h) CHECK(bit_equal(ps_full.value(h), ps_half.value(h)));
  REQUIRE(part2.step_losses.size() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(part2.step_losses[i] == full.step_losses[i + 4]);  // exact double equality

  // The resumed csv appends instead of truncating: one header, 8 data rows.
  const auto lines = read_lines((fs::path(cfg_half.out_dir) / "metrics.csv").string());
  REQUIRE(lines.size() == 9);
  CHECK(lines[0] == "epoch,step,loss,lr,wall_time");
}

TEST_CASE("train loop validates its inputs before touching the filesystem") {
  const TUNetConfig cfg = tiny_config();
  nn::ParameterStore<double> ps(1);
  TUNet<double> net(ps, cfg);

  PairDataset<double> empty;
  TrainConfig tc;
  tc.out_dir = "/nonexistent-root/should-not-be-created";
  CHECK_THROWS_AS(train_loop(tc, net, ps, empty), std::invalid_argument);

  const auto lat = const_latent(0.0, 0.0);
  PairDataset<double> bad_class;
  PairItem<double> item;
  item.ref = &lat;
  item.tar = &lat;
  item.class_id = 99;  // outside the 4-entry class table
  bad_class.train.push_back(item);
  CHECK_THROWS_AS(train_loop(tc, net, ps, bad_class), ConfigError);
}

TEST_CASE("epoch order is a deterministic permutation keyed by seed and epoch") {
  const auto a = epoch_order(16, 5, 3);
  const auto b = epoch_order(16, 5, 3);
  const auto c = epoch_order(16, 5, 4);
  CHECK(a == b);
  CHECK(a != c);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 16; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}

TEST_CASE("smoothed losses average over a trailing window") {
  const std::vector<double> xs = {4.0, 2.0, 6.0, 8.0};
  const auto out = smoothed_losses(xs, 3);
  REQUIRE(out.size() == 4);
  CHECK(out[0] == Catch::Approx(4.0));
  CHECK(out[1] == Catch::Approx(3.0));
  CHECK(out[2] == Catch::Approx(4.0));
  CHECK(out[3] == Catch::Approx(16.0 / 3.0).margin(1e-15));
  CHECK_THROWS_AS(smoothed_losses(xs, 0), std::invalid_argument);
}
