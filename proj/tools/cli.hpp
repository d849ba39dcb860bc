#pragma once

// Command-line front end. run() returns 0 on success, 1 on a usage or
// configuration error, 2 on a runtime failure.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "kamim/kamim.hpp"

namespace kamim::cli {

namespace fs = std::filesystem;

class Manifest {
 public:
  Manifest(std::string subcommand, const std::vector<std::string>& argv) {
    doc_["tool"] = "kamim";
    doc_["subcommand"] = std::move(subcommand);
    doc_["argv"] = argv;
    doc_["inputs"] = nlohmann::json::array();
    doc_["outputs"] = nlohmann::json::array();
  }

  void input(const std::string& path) {
    const auto bytes = detail::read_file(path);
    doc_["inputs"].push_back({{"path", path},
                              {"bytes", bytes.size()},
                              {"fnv1a64", hex64(fnv1a64(bytes.data(), bytes.size()))}});
  }

  void output(const std::string& path) { doc_["outputs"].push_back(path); }

  void config(const Config& cfg) {
    doc_["config"] = cfg.to_json();
    doc_["config_hash"] = cfg.hash();
  }

  nlohmann::json& operator[](const char* key) { return doc_[key]; }

  void write(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write manifest '" + path + "'");
    out << doc_.dump(2) << "\n";
  }

 private:
  nlohmann::json doc_;
};

inline std::ofstream open_csv(const std::string& path, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << header << "\n";
  return out;
}

inline void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

inline std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

struct Common {
  int threads = 0;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

inline Config load_config(const TrainArgs& a, const Common& c, Manifest& m) {
  Config cfg;
  if (!a.config_path.empty()) {
    cfg.load(a.config_path);
    m.input(a.config_path);
  }
  for (const auto& o : a.overrides) cfg.apply_override(o);
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  m.config(cfg);
  return cfg;
}

inline PackedDataset load_dataset(const std::string& path, Manifest& m, const char* what) {
  if (path.empty()) throw ConfigError(std::string("no ") + what + " dataset given");
  auto ds = load_packed(path);
  m.input(path);
  return ds;
}

inline void log_line(const std::string& s) { std::cerr << s << std::endl; }

// ---------------------------------------------------------------------------

inline void cmd_detect(const std::string& input, int threshold, bool no_nms, const Common& c,
                       const std::vector<std::string>& argv) {
  Manifest m("detect", argv);
  m.input(input);
  const auto img = load_pgm(input);
  const auto kps = fast::detect(img, fast::DetectOptions{threshold, !no_nms, true});
  ensure_parent(c.out);
  auto csv = open_csv(c.out, "x,y,score");
  for (const auto& k : kps) csv << k.x << "," << k.y << "," << k.score << "\n";
  m["threshold"] = threshold;
  m["nms"] = !no_nms;
  m["keypoints"] = kps.size();
  m.output(c.out);
  m.write(c.out + ".manifest.json");
}

inline void cmd_weights(const std::string& input, int wps, double temperature, int threshold, const Common& c,
                        const std::vector<std::string>& argv) {
  Manifest m("weights", argv);
  m.input(input);
  const auto img = load_pgm(input);
  WeightConfig wc{wps, temperature};
  try {
    wc.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const auto w = keypoint_weights(img, wc, threshold);
  ensure_parent(c.out);
  save_weight_map(w, c.out);
  m["wps"] = wps;
  m["temperature"] = temperature;
  m["threshold"] = threshold;
  m.output(c.out);
  m.write(c.out + ".manifest.json");
}

inline void cmd_mask(int img_size, int mask_patch, double ratio, const Common& c, const std::vector<std::string>& argv) {
  Manifest m("mask", argv);
  MaskConfig mc{mask_patch, ratio, *c.seed};
  try {
    mc.validate(img_size);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const auto mask = generate_mask(img_size, mc);
  ensure_parent(c.out);
  auto csv = open_csv(c.out, "row,col,masked");
  for (int r = 0; r < mask.grid_h; ++r)
    for (int q = 0; q < mask.grid_w; ++q) csv << r << "," << q << "," << (mask.at(r, q) ? 1 : 0) << "\n";
  m["seed"] = *c.seed;
  m["masked_cells"] = mask.masked_count();
  m.output(c.out);
  m.write(c.out + ".manifest.json");
}

inline void cmd_synth(int classes, int per_class, int count, int img_size, const Common& c,
                      const std::vector<std::string>& argv) {
  Manifest m("synth", argv);
  PackedDataset ds;
  try {
    ds = count >= 0 ? make_synthetic_split(count, classes, img_size, *c.seed)
                    : make_synthetic(per_class, classes, img_size, *c.seed);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  ensure_parent(c.out);
  save_packed(ds, c.out);
  m["seed"] = *c.seed;
  m["count"] = ds.count;
  m.output(c.out);
  m.write(c.out + ".manifest.json");
}

inline void cmd_pretrain(const TrainArgs& a, const std::string& data_path, const Common& c,
                         const std::vector<std::string>& argv) {
  Manifest m("pretrain", argv);
  Config cfg = load_config(a, c, m);
  if (!data_path.empty()) cfg.set("data.train", data_path);
  m.config(cfg);
  const PretrainConfig pc = cfg.pretrain();
  const auto data = load_dataset(cfg.get("data.train"), m, "training");
  fs::create_directories(c.out);
  auto csv = open_csv(join(c.out, "train.csv"), "step,epoch,lr,loss");
  csv.precision(9);
  int last_epoch = -1;
  double epoch_loss = 0.0;
  int epoch_steps = 0;
  auto flush_epoch = [&](int e) {
    if (e >= 0 && epoch_steps > 0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %d/%d  mean loss %.5f", e + 1, pc.optim.epochs, epoch_loss / epoch_steps);
      log_line(buf);
    }
  };
  std::optional<PretrainResult> trained;
  try {
    trained = pretrain(data, pc, [&](const StepInfo& s) {
      if (s.epoch != last_epoch) {
        flush_epoch(last_epoch);
        last_epoch = s.epoch;
        epoch_loss = 0.0;
        epoch_steps = 0;
      }
      epoch_loss += s.loss;
      ++epoch_steps;
      csv << s.step << "," << s.epoch << "," << s.lr << "," << s.loss << "\n";
    });
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  flush_epoch(last_epoch);
  PretrainResult& result = *trained;
  const std::string ckpt = join(c.out, "checkpoint.kcpt");
  result.model.save(ckpt);
  auto ep = open_csv(join(c.out, "epochs.csv"), "epoch,seconds");
  for (std::size_t e = 0; e < result.report.epoch_seconds.size(); ++e) ep << e << "," << result.report.epoch_seconds[e] << "\n";
  std::ofstream(join(c.out, "config.txt")) << cfg.canonical_text();
  for (const char* f : {"checkpoint.kcpt", "checkpoint.kcpt.cfg", "train.csv", "epochs.csv", "config.txt"}) m.output(join(c.out, f));
  m["seed"] = cfg.get_int("seed");
  m["steps"] = result.report.losses.size();
  const auto bytes = detail::read_file(ckpt);
  m["checkpoint_fnv1a64"] = hex64(fnv1a64(bytes.data(), bytes.size()));
  m.write(join(c.out, "manifest.json"));
}

inline void cmd_probe(const TrainArgs& a, const std::string& checkpoint, const std::string& train_path,
                      const std::string& test_path, bool finetuning, const Common& c, const std::vector<std::string>& argv) {
  Manifest m(finetuning ? "finetune" : "probe", argv);
  Config cfg = load_config(a, c, m);
  if (!train_path.empty()) cfg.set("data.train", train_path);
  if (!test_path.empty()) cfg.set("data.test", test_path);
  m.config(cfg);
  m.input(checkpoint);
  auto model = VisionTransformer::load(checkpoint);
  const auto train = load_dataset(cfg.get("data.train"), m, "training");
  const auto test = load_dataset(cfg.get("data.test"), m, "test");
  fs::create_directories(c.out);
  ProbeResult r;
  try {
    if (finetuning) {
      r = finetune(model, train, test, cfg.finetune());
    } else {
      r = linear_probe(model, train, test, cfg.probe());
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const std::string name = finetuning ? "finetune" : "probe";
  auto csv = open_csv(join(c.out, name + ".csv"), "metric,value");
  csv << "train_top1," << r.train_accuracy << "\n" << "test_top1," << r.test_accuracy << "\n";
  auto losses = open_csv(join(c.out, name + "_loss.csv"), "step,loss");
  for (std::size_t i = 0; i < r.losses.size(); ++i) losses << i << "," << r.losses[i] << "\n";
  m.output(join(c.out, name + ".csv"));
  m.output(join(c.out, name + "_loss.csv"));
  if (finetuning) {
    model.save(join(c.out, "finetuned.kcpt"));
    m.output(join(c.out, "finetuned.kcpt"));
  }
  m["seed"] = cfg.get_int("seed");
  m["test_top1"] = r.test_accuracy;
  m.write(join(c.out, "manifest.json"));
  std::printf("%s test top-1: %.4f\n", name.c_str(), r.test_accuracy);
}

inline void cmd_analyze(const std::string& checkpoint, const std::string& data_path, int count, const Common& c,
                        const std::vector<std::string>& argv) {
  Manifest m("analyze", argv);
  m.input(checkpoint);
  auto model = VisionTransformer::load(checkpoint);
  const auto data = load_dataset(data_path, m, "analysis");
  if (count < 1) throw ConfigError("--count must be >= 1");
  // Deterministic sample of `count` images.
  std::vector<std::size_t> idx(data.count);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(*c.seed);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(count)));
  if (idx.empty()) throw ConfigError("analysis dataset is empty");
  const auto sample = data.select(idx);
  detail::check_geometry(sample, model.config());
  std::vector<std::size_t> local(idx.size());
  for (std::size_t i = 0; i < local.size(); ++i) local[i] = i;
  const Tensor images = detail::normalized_batch(sample, local, Normalization{});
  NoGradGuard guard;
  ForwardOptions fo;
  fo.capture_attention = true;
  fo.capture_tokens = true;
  const auto out = model.forward(images, {}, fo);
  const auto& mc = model.config();
  const auto stack = attention_stack(out.attention, mc.grid(), mc.patch_size);
  fs::create_directories(c.out);
  auto write_curve = [&](const std::string& name, const LayerCurve& curve) {
    auto csv = open_csv(join(c.out, name), "layer,value");
    csv.precision(10);
    for (std::size_t l = 0; l < curve.size(); ++l) csv << l << "," << curve[l] << "\n";
    m.output(join(c.out, name));
  };
  write_curve("attention_distance.csv", attention_distance(stack));
  write_curve("attention_nmi.csv", attention_nmi(stack, 1e-4));
  write_curve("fourier_rel_log_amp.csv", fourier_rel_log_amp(out.hidden));
  const std::int64_t N = mc.tokens();
  const std::int64_t D = mc.embed_dim;
  for (std::size_t l = 0; l < out.pre_attention.size(); ++l) {
    for (int post = 0; post < 2; ++post) {
      const Tensor& t = post ? out.post_attention[l] : out.pre_attention[l];
      std::vector<double> rows(t.data().begin(), t.data().end());
      const auto pca = pca_project(rows, t.dim(0) * N, D);
      const std::string name = "tokens_layer" + std::to_string(l) + (post ? "_post.csv" : "_pre.csv");
      auto csv = open_csv(join(c.out, name), "token,x,y,image_id,class_id");
      csv.precision(8);
      for (std::int64_t i = 0; i < t.dim(0) * N; ++i) {
        const auto b = static_cast<std::size_t>(i / N);
        csv << i % N << "," << pca.coords[i * 2] << "," << pca.coords[i * 2 + 1] << "," << idx[b] << ","
            << sample.labels[b] << "\n";
      }
      m.output(join(c.out, name));
    }
  }
  m["seed"] = *c.seed;
  m["images"] = idx.size();
  m.write(join(c.out, "manifest.json"));
}

inline void cmd_reconstruct(const std::string& checkpoint, const std::string& data_path, int index, double ratio,
                            int mask_patch, const Common& c, const std::vector<std::string>& argv) {
  Manifest m("reconstruct", argv);
  m.input(checkpoint);
  auto model = VisionTransformer::load(checkpoint);
  const auto data = load_dataset(data_path, m, "input");
  if (index < 0 || static_cast<std::uint32_t>(index) >= data.count) {
    throw ConfigError("--index " + std::to_string(index) + " outside dataset of " + std::to_string(data.count));
  }
  const auto& mc = model.config();
  std::vector<std::size_t> one{static_cast<std::size_t>(index)};
  const auto sample = data.select(one);
  detail::check_geometry(sample, mc);
  MaskConfig mcfg{mask_patch, ratio, *c.seed};
  try {
    mcfg.validate(mc.img_size);
    if (mask_patch % mc.patch_size != 0) throw InvalidArgument("mask patch must be a multiple of the token patch");
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const auto mask = generate_mask(mc.img_size, mcfg);
  const auto tokens = expand_to_tokens(mask, mask_patch, mc.patch_size);
  const Normalization norm;
  const auto mean = norm.mean_for(mc.channels);
  const auto sd = norm.std_for(mc.channels);
  const RasterImage original = sample.image(0);
  const Tensor images = batch_images({normalize(original, mean, sd)});
  NoGradGuard guard;
  ForwardOptions fo;
  fo.capture_attention = false;
  const auto out = model.forward(images, tokens, fo);
  RasterImage recon = denormalize(unbatch_image(out.reconstruction, 0), mean, sd);
  for (auto& v : recon.data) v = std::clamp(v, 0.0f, 1.0f);
  // Masked input: masked pixels shown as mid gray.
  RasterImage masked = original;
  RasterImage composite = original;
  const int p = mc.patch_size;
  const int g = mc.grid();
  double se = 0.0;
  std::int64_t masked_values = 0;
  for (int ch = 0; ch < mc.channels; ++ch) {
    for (int y = 0; y < mc.img_size; ++y) {
      for (int x = 0; x < mc.img_size; ++x) {
        if (!tokens[static_cast<std::size_t>((y / p) * g + x / p)]) continue;
        masked.at(ch, y, x) = 0.5f;
        composite.at(ch, y, x) = recon.at(ch, y, x);
        const double d = static_cast<double>(recon.at(ch, y, x)) - original.at(ch, y, x);
        se += d * d;
        ++masked_values;
      }
    }
  }
  fs::create_directories(c.out);
  const std::string ext = mc.channels == 1 ? ".pgm" : ".ppm";
  save_pnm(original, join(c.out, "original" + ext));
  save_pnm(masked, join(c.out, "masked" + ext));
  save_pnm(recon, join(c.out, "reconstruction" + ext));
  save_pnm(composite, join(c.out, "composite" + ext));
  auto csv = open_csv(join(c.out, "metrics.csv"), "metric,value");
  csv.precision(10);
  csv << "masked_pixels," << masked_values / mc.channels << "\n";
  csv << "psnr_full," << psnr(recon, original) << "\n";
  csv << "ssim_full," << ssim(recon, original) << "\n";
  if (masked_values == 0) {
    csv << "psnr_masked,no masked pixels\n";
    csv << "ssim_composite,no masked pixels\n";
  } else {
    csv << "psnr_masked," << psnr_from_mse(se / static_cast<double>(masked_values)) << "\n";
    csv << "ssim_composite," << ssim(composite, original) << "\n";
  }
  for (const std::string& f : {"original" + ext, "masked" + ext, "reconstruction" + ext, "composite" + ext,
                              std::string("metrics.csv")}) {
    m.output(join(c.out, f));
  }
  m["seed"] = *c.seed;
  m["index"] = index;
  m.write(join(c.out, "manifest.json"));
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Keypoint-aware masked image modeling toolkit"};
  app.require_subcommand(1);
  Common common;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub, bool needs_seed, bool out_is_dir) {
    sub->add_option("--threads", common.threads, "Worker threads (default: KAMIM_THREADS or all cores)");
    sub->add_option("--out", common.out, out_is_dir ? "Output directory" : "Output file")->required();
    if (needs_seed) sub->add_option("--seed", seed_value, "Random seed")->required();
  };

  std::string input;
  int threshold = fast::kDefaultThreshold;
  bool no_nms = false;
  auto* detect = app.add_subcommand("detect", "FAST keypoints of a PGM image as CSV");
  detect->add_option("--input", input, "Input PGM")->required();
  detect->add_option("--threshold", threshold, "Intensity threshold")->check(CLI::Range(0, 255));
  detect->add_flag("--no-nms", no_nms, "Keep non-maximal responses");
  add_common(detect, false, false);

  int wps = 4;
  double temperature = 0.25;
  auto* weights = app.add_subcommand("weights", "Keypoint-density weight map (KWMF) of a PGM image");
  weights->add_option("--input", input, "Input PGM")->required();
  weights->add_option("--wps", wps, "Weight patch size");
  weights->add_option("--temperature", temperature, "Temperature T");
  weights->add_option("--threshold", threshold, "FAST threshold")->check(CLI::Range(0, 255));
  add_common(weights, false, false);

  int img_size = 32;
  int mask_patch = 8;
  double ratio = 0.6;
  auto* mask = app.add_subcommand("mask", "Random patch mask as CSV");
  mask->add_option("--img-size", img_size, "Image side");
  mask->add_option("--mask-patch", mask_patch, "Mask patch size");
  mask->add_option("--ratio", ratio, "Masking ratio");
  add_common(mask, true, false);

  int classes = 3;
  int per_class = 100;
  int count = -1;
  auto* synth = app.add_subcommand("synth", "Synthetic labeled dataset (KIMG)");
  synth->add_option("--classes", classes, "Number of classes");
  synth->add_option("--per-class", per_class, "Images per class");
  synth->add_option("--count", count, "Total images (overrides --per-class)");
  synth->add_option("--img-size", img_size, "Image side");
  add_common(synth, true, false);

  TrainArgs targs;
  std::string data_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", targs.config_path, "Config file (key = value lines or JSON)");
    sub->add_option("--set", targs.overrides, "Config override key=value (repeatable)");
  };
  auto* pre = app.add_subcommand("pretrain", "Masked image modeling pretraining");
  add_config(pre);
  pre->add_option("--data", data_path, "Training dataset (overrides data.train)");
  add_common(pre, true, true);

  std::string checkpoint;
  std::string test_path;
  auto* probe = app.add_subcommand("probe", "Linear probe on a frozen backbone");
  auto* fine = app.add_subcommand("finetune", "Finetune backbone and head");
  for (auto* sub : {probe, fine}) {
    add_config(sub);
    sub->add_option("--checkpoint", checkpoint, "Backbone checkpoint")->required();
    sub->add_option("--train", data_path, "Training dataset (overrides data.train)");
    sub->add_option("--test", test_path, "Test dataset (overrides data.test)");
    add_common(sub, true, true);
  }

  int analyze_count = 8;
  auto* analyze = app.add_subcommand("analyze", "Attention and representation metrics");
  analyze->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  analyze->add_option("--data", data_path, "Dataset")->required();
  analyze->add_option("--count", analyze_count, "Images to analyze");
  add_common(analyze, true, true);

  int index = 0;
  auto* recon = app.add_subcommand("reconstruct", "Masked reconstruction of one image with PSNR/SSIM");
  recon->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  recon->add_option("--data", data_path, "Dataset")->required();
  recon->add_option("--index", index, "Image index");
  recon->add_option("--ratio", ratio, "Masking ratio");
  recon->add_option("--mask-patch", mask_patch, "Mask patch size");
  add_common(recon, true, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (common.threads > 0) {
      set_num_threads(common.threads);
    } else {
      threads_from_env();
    }
    for (auto* sub : app.get_subcommands()) {
      const auto* opt = sub->get_option_no_throw("--seed");
      if (opt != nullptr && opt->count() > 0) common.seed = seed_value;
    }
    if (*detect) cmd_detect(input, threshold, no_nms, common, args);
    if (*weights) cmd_weights(input, wps, temperature, threshold, common, args);
    if (*mask) cmd_mask(img_size, mask_patch, ratio, common, args);
    if (*synth) cmd_synth(classes, per_class, count, img_size, common, args);
    if (*pre) cmd_pretrain(targs, data_path, common, args);
    if (*probe) cmd_probe(targs, checkpoint, data_path, test_path, false, common, args);
    if (*fine) cmd_probe(targs, checkpoint, data_path, test_path, true, common, args);
    if (*analyze) cmd_analyze(checkpoint, data_path, analyze_count, common, args);
    if (*recon) cmd_reconstruct(checkpoint, data_path, index, ratio, mask_patch, common, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace kamim::cli
