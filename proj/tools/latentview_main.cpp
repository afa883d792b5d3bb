// Copyright (c) 2026 latentview authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface. Verbs: make-synthetic, import-dataset, invert,
// train, synthesize, evaluate. Exit codes: 0 ok, 2 config, 3 data,
// 4 numerical.

#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latentview/latentview.hpp"

namespace lv = latentview;
using S = float;

namespace {

std::string toy_prior_file(const lv::AppConfig& cfg) {
  if (!cfg.prior_path.empty()) return cfg.prior_path;
  return (std::filesystem::path(cfg.cache_dir) / "toy_prior.tunc").string();
}

std::unique_ptr<lv::LatentCodec<S>> make_codec(const lv::AppConfig& cfg) {
  return std::make_unique<lv::OrthoPatchCodec<S>>(cfg.image_size);
}

// Loads the configured prior. When the toy prior has no saved weights yet and
// `scenes` is provided, it is trained on those scenes' encoded latents and
// saved next to the cache.
std::unique_ptr<lv::DiffusionPrior<S>> make_prior(const lv::AppConfig& cfg,
                                                  const lv::LatentCodec<S>& codec,
                                                  const lv::NoiseSchedule& schedule,
                                                  const std::vector<lv::SceneRecord>* scenes) {
  if (cfg.prior == "zero")
    return std::make_unique<lv::ZeroPrior<S>>(codec.latent_shape(), schedule.num_train_steps());
  if (cfg.prior == "external") {
    if (cfg.prior_path.empty())
      throw lv::ConfigError("prior=external requires prior_path (the backbone locator)");
    auto prior = std::make_unique<lv::ExternalPriorAdapter<S>>(cfg.prior_path);
    if (prior->latent_shape() != codec.latent_shape())
      throw lv::ConfigError("external prior latent shape does not match the codec");
    return prior;
  }
  if (cfg.prior != "toy")
    throw lv::ConfigError("prior must be toy, zero, or external (got '" + cfg.prior + "')");

  const std::string path = toy_prior_file(cfg);
  if (std::filesystem::exists(path)) {
    auto prior = lv::ToyPrior<S>::load(path);
    if (prior->latent_shape() != codec.latent_shape())
      throw lv::ConfigError("toy prior at '" + path + "' does not match the codec latent shape");
    return prior;
  }
  if (!scenes)
    throw lv::ConfigError("toy prior weights not found at '" + path +
                          "'; run the invert verb on the training dataset first");

  std::cerr << "[latentview] training toy prior (" << path << ")\n";
  std::vector<lv::LatentGrid<S>> latents;
  for (const auto& scene : *scenes)
    for (const auto& frame : scene.frames)
      latents.push_back(
          codec.encode(lv::preprocess_image(lv::read_png(frame.image_path), codec.image_size())));
  lv::ToyPriorConfig pc;
  pc.latent_shape = codec.latent_shape();
  pc.width = cfg.prior_width;
  pc.depth = cfg.prior_depth;
  pc.num_train_steps = schedule.num_train_steps();
  pc.train_steps = cfg.prior_train_steps;
  pc.batch_size = cfg.prior_batch;
  pc.lr = cfg.prior_lr;
  pc.seed = cfg.seed;
  double final_loss = 0;
  auto prior = lv::train_toy_prior<S>(pc, latents, schedule, &final_loss);
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  prior->save(path);
  std::cerr << "[latentview] toy prior trained, final loss " << final_loss << "\n";
  return prior;
}

struct LoadedModel {
  lv::TUNetConfig mcfg;
  std::unique_ptr<lv::nn::ParameterStore<S>> ps;
  std::unique_ptr<lv::TUNet<S>> model;
  int t_star = 600;
  int steps = 30;
  std::vector<std::string> classes;
};

LoadedModel load_model(const std::string& path) {
  auto [meta, tensors] = lv::deserialize_archive<S>(lv::read_file(path));
  if (meta.value("kind", "") != "tunet_train")
    throw lv::DataError("'" + path + "' is not a model checkpoint");
  LoadedModel lm;
  lm.mcfg = lv::tunet_config_from_json(meta.at("model"));
  lm.ps = std::make_unique<lv::nn::ParameterStore<S>>(0);
  lm.model = std::make_unique<lv::TUNet<S>>(*lm.ps, lm.mcfg);
  lv::load_into_store(tensors, *lm.ps);
  lm.t_star = meta.at("train").at("t_star").get<int>();
  lm.steps = meta.at("train").at("steps").get<int>();
  if (meta.contains("classes")) lm.classes = meta["classes"].get<std::vector<std::string>>();
  return lm;
}

lv::Camera camera_from_file(const std::string& path) {
  try {
    return lv::camera_from_json(nlohmann::json::parse(lv::read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw lv::DataError("camera file '" + path + "': " + e.what());
  }
}

int resolve_class(const std::string& value, const std::vector<std::string>& vocab) {
  if (!value.empty() && value.find_first_not_of("0123456789") == std::string::npos)
    return std::stoi(value);
  for (std::size_t i = 0; i < vocab.size(); ++i)
    if (vocab[i] == value) return static_cast<int>(i);
  throw lv::ConfigError("unknown class '" + value + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentview: single-image novel view synthesis via latent translation"};
  app.require_subcommand(1);

  std::string config_path, preset = "desk", cache_dir_flag;
  std::uint64_t seed_flag = 0;
  app.add_option("--config", config_path, "flat key=value config file");
  auto* seed_opt = app.add_option("--seed", seed_flag, "root seed");
  auto* cache_opt = app.add_option("--cache-dir", cache_dir_flag, "inversion cache directory");
  app.add_option("--preset", preset, "component preset")->check(CLI::IsMember({"paper", "desk"}));

  // Resolves precedence: defaults < preset < config file < LATENTVIEW_CACHE
  // < explicit flags.
  auto resolve = [&]() {
    lv::AppConfig cfg = lv::AppConfig::with_preset(preset);
    if (!config_path.empty()) cfg.apply_file(lv::KeyValueConfig::parse_file(config_path));
    if (const char* env = std::getenv("LATENTVIEW_CACHE"); env && *env) cfg.cache_dir = env;
    if (seed_opt->count() > 0) cfg.seed = seed_flag;
    if (cache_opt->count() > 0) cfg.cache_dir = cache_dir_flag;
    return cfg;
  };

  // make-synthetic ----------------------------------------------------------
  auto* mk = app.add_subcommand("make-synthetic", "render a synthetic multi-view dataset");
  std::string mk_root;
  int mk_scenes = -1, mk_frames = -1;
  mk->add_option("--root", mk_root, "output dataset root");
  mk->add_option("--num-scenes", mk_scenes, "number of scenes");
  mk->add_option("--frames", mk_frames, "frames per scene");
  mk->callback([&]() {
    lv::AppConfig cfg = resolve();
    const std::string root = mk_root.empty() ? cfg.data_root : mk_root;
    const int n = mk_scenes > 0 ? mk_scenes : cfg.num_scenes;
    const int f = mk_frames > 0 ? mk_frames : cfg.frames_per_scene;
    lv::make_synthetic_dataset(root, n, f, cfg.seed, cfg.image_size, cfg.arc_degrees);
    std::cout << "wrote " << n << " scenes (" << f << " frames each) to " << root << "\n";
  });

  // import-dataset ----------------------------------------------------------
  auto* im = app.add_subcommand("import-dataset", "convert a posed capture to the scene layout");
  std::string im_src, im_dst;
  im->add_option("--src", im_src, "source root")->required();
  im->add_option("--dst", im_dst, "destination root")->required();
  im->callback([&]() {
    resolve();
    const lv::ImportStats st = lv::import_dataset(im_src, im_dst, &std::cerr);
    std::cout << "imported " << st.scenes << " scenes, " << st.frames << " frames";
    if (!st.skipped.empty()) std::cout << " (" << st.skipped.size() << " skipped)";
    std::cout << "\n";
  });

  // invert ------------------------------------------------------------------
  auto* inv = app.add_subcommand("invert", "precompute cached inversions for a dataset");
  std::string inv_data;
  inv->add_option("--data", inv_data, "dataset root (default: data_root)");
  inv->callback([&]() {
    lv::AppConfig cfg = resolve();
    const std::string root = inv_data.empty() ? cfg.data_root : inv_data;
    const auto scenes = lv::load_dataset(root);
    const auto codec = make_codec(cfg);
    const lv::NoiseSchedule schedule = lv::NoiseSchedule::linear();
    const auto prior = make_prior(cfg, *codec, schedule, &scenes);
    const auto entries = lv::precompute_inversions<S>(scenes, *codec, *prior, schedule,
                                                      cfg.t_star, cfg.steps, cfg.cache_dir,
                                                      &std::cerr);
    std::cout << "cache holds " << entries.size() << " inversions in " << cfg.cache_dir << "\n";
  });

  // train -------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train the translation network on cached inversions");
  std::string tr_data, tr_resume, tr_out;
  tr->add_option("--data", tr_data, "dataset root (default: data_root)");
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");
  tr->add_option("--out-dir", tr_out, "run directory (default: out_dir)");
  tr->callback([&]() {
    lv::AppConfig cfg = resolve();
    if (!tr_out.empty()) cfg.out_dir = tr_out;
    const std::string root = tr_data.empty() ? cfg.data_root : tr_data;
    const auto scenes = lv::load_dataset(root);
    const auto vocab = lv::read_class_vocab(root);
    const auto codec = make_codec(cfg);
    const lv::NoiseSchedule schedule = lv::NoiseSchedule::linear();
    const auto prior = make_prior(cfg, *codec, schedule, &scenes);
    lv::precompute_inversions<S>(scenes, *codec, *prior, schedule, cfg.t_star, cfg.steps,
                                 cfg.cache_dir, &std::cerr);
    const auto manifest = lv::manifest_from_json(
        nlohmann::json::parse(lv::read_file(cfg.cache_dir + "/manifest.json")));
    const lv::CacheIndex cache(manifest);

    std::vector<std::string> ids;
    for (const auto& s : scenes) ids.push_back(s.scene_id);
    const lv::SplitResult split = lv::split_scenes(ids);
    const lv::TrainConfig tcfg = cfg.train_config();
    const auto data = lv::build_pair_dataset<S>(scenes, split, cache, tcfg, vocab, &std::cerr);

    lv::TUNetConfig mcfg = cfg.preset == "paper" ? lv::TUNetConfig::paper_preset()
                                                 : lv::TUNetConfig::desk_preset();
    lv::nn::ParameterStore<S> ps(lv::mix_seed(cfg.seed, 0x1217ULL));
    const lv::TUNet<S> model(ps, mcfg);
    const lv::TrainResult res = lv::train_loop(tcfg, model, ps, data, &std::cerr, tr_resume);
    std::cout << "best val " << res.best_val << " (epoch " << res.best_epoch << "), checkpoints in "
              << tcfg.out_dir << "\n";
  });

  // synthesize --------------------------------------------------------------
  auto* sy = app.add_subcommand("synthesize", "render a novel view from one reference image");
  std::string sy_ref, sy_ref_cam, sy_tar_cam, sy_class = "0", sy_out, sy_model, sy_strategy,
              sy_sign;
  sy->add_option("--ref-image", sy_ref, "reference image (PNG)")->required();
  sy->add_option("--ref-cam", sy_ref_cam, "reference camera JSON")->required();
  sy->add_option("--tar-cam", sy_tar_cam, "target camera JSON")->required();
  sy->add_option("--class", sy_class, "class id or name");
  sy->add_option("--strategy", sy_strategy, "fusion strategy")
      ->check(CLI::IsMember({"a", "b", "both"}));
  sy->add_option("--coefficient-sign", sy_sign, "fusion coefficient sign")
      ->check(CLI::IsMember({"plus", "minus"}));
  sy->add_option("--out", sy_out, "output PNG path")->required();
  sy->add_option("--model", sy_model, "model checkpoint (default: <out_dir>/best.tunc)");
  sy->callback([&]() {
    lv::AppConfig cfg = resolve();
    if (!sy_strategy.empty()) cfg.strategy = sy_strategy;
    if (!sy_sign.empty()) cfg.coefficient_sign = sy_sign;
    const std::string model_path =
        sy_model.empty() ? cfg.out_dir + "/best.tunc" : sy_model;
    LoadedModel lm = load_model(model_path);
    const auto codec = make_codec(cfg);
    const lv::NoiseSchedule schedule = lv::NoiseSchedule::linear();
    const auto prior = make_prior(cfg, *codec, schedule, nullptr);

    lv::SynthesisContext<S> ctx;
    ctx.model = lm.model.get();
    ctx.ps = lm.ps.get();
    ctx.model_t_star = lm.t_star;
    ctx.prior = prior.get();
    ctx.codec = codec.get();
    ctx.schedule = &schedule;
    ctx.steps = lm.steps;
    cfg.t_star = lm.t_star;  // fusion must agree with the trained model
    const lv::FusionConfig fusion = cfg.fusion_config();

    const lv::Image ref = lv::read_png(sy_ref);
    const lv::Camera cam_ref = camera_from_file(sy_ref_cam);
    const lv::Camera cam_tar = camera_from_file(sy_tar_cam);
    const int cls = resolve_class(sy_class, lm.classes);
    const lv::SynthesisResult out = lv::synthesize(ref, cam_ref, cam_tar, cls, ctx, fusion,
                                                   &std::cerr);
    lv::write_png(sy_out, out.image);
    std::cout << "wrote " << sy_out << " (strategy " << out.tag << ")\n";
  });

  // evaluate ----------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "run the synthesis benchmark on a test split");
  std::string ev_data, ev_model;
  ev->add_option("--data", ev_data, "dataset root (default: test_root or data_root)");
  ev->add_option("--model", ev_model, "model checkpoint (default: <out_dir>/best.tunc)");
  ev->callback([&]() {
    lv::AppConfig cfg = resolve();
    const std::string root =
        !ev_data.empty() ? ev_data : (!cfg.test_root.empty() ? cfg.test_root : cfg.data_root);
    const std::string model_path =
        ev_model.empty() ? cfg.out_dir + "/best.tunc" : ev_model;
    LoadedModel lm = load_model(model_path);
    const auto codec = make_codec(cfg);
    const lv::NoiseSchedule schedule = lv::NoiseSchedule::linear();
    const auto prior = make_prior(cfg, *codec, schedule, nullptr);

    lv::SynthesisContext<S> ctx;
    ctx.model = lm.model.get();
    ctx.ps = lm.ps.get();
    ctx.model_t_star = lm.t_star;
    ctx.prior = prior.get();
    ctx.codec = codec.get();
    ctx.schedule = &schedule;
    ctx.steps = lm.steps;
    cfg.t_star = lm.t_star;
    const lv::FusionConfig fusion = cfg.fusion_config();

    const auto scenes = lv::load_dataset(root);
    std::vector<std::string> ids;
    for (const auto& s : scenes) ids.push_back(s.scene_id);

    lv::EvalProtocol proto;
    proto.protocol_resize = cfg.protocol_resize;
    proto.pairs_per_scene = cfg.eval_pairs_per_scene;
    proto.seed = cfg.eval_seed;
    const lv::EvalReport report = lv::evaluate(scenes, ids, ctx, fusion, proto, &std::cerr);
    std::filesystem::create_directories(cfg.out_dir);
    lv::write_eval_report(report, cfg.out_dir + "/eval.json", cfg.out_dir + "/eval.csv");
    std::cout << "pairs " << report.agg.pairs << " skipped " << report.agg.skipped
              << "\nmean psnr " << report.agg.mean_psnr << " dB (copy-ref "
              << report.agg.mean_psnr_copy_ref << " dB, mean-only "
              << report.agg.mean_psnr_mu_only << " dB)\nmean ssim " << report.agg.mean_ssim
              << "\nreport: " << cfg.out_dir << "/eval.json\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const lv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const lv::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const lv::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
