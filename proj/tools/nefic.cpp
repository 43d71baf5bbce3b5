// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
//
// nefic — neural image codec command line.
//
//   nefic train <vae|backbone|stage1|stage2> --config run.json [--dry-run]
//   nefic compress   in.png  -c stage2.ckpt -l 3 -o out.nfic
//   nefic decompress in.nfic -c stage2.ckpt -o out.png [--emit-anchor a.png]
//   nefic eval  --images dir -o rd.csv ckptA.ckpt ckptB.ckpt ...
//   nefic bdrate anchor.csv test.csv [--metric psnr]
//   nefic plot  --out dir rd1.csv rd2.csv ... [--frames]
//   nefic gendata --out dir --count 64 --side 128 --seed 7
//
// Exit codes: 0 ok, 2 unreadable/unusable image, 3 missing checkpoint or
// prerequisite stage, 4 invalid rate-ladder index, 5 malformed compressed
// stream, 6 configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nefic/bdrate.hpp"
#include "nefic/plot.hpp"
#include "nefic/training.hpp"

namespace fs = std::filesystem;
using Scalar = float;

namespace {

constexpr int kExitBadImage = 2;
constexpr int kExitMissingCheckpoint = 3;
constexpr int kExitBadLambda = 4;
constexpr int kExitBadStream = 5;
constexpr int kExitBadConfig = 6;

struct LoadedModels {
  std::unique_ptr<nefic::Models<Scalar>> m;
  nefic::CheckpointMeta meta;
  nefic::RunConfig cfg;  // parsed from the checkpoint's embedded config
};

// Loads a checkpoint into a fresh model set. The embedded config echo tells
// us which ablation flags and rate point the weights were trained for.
LoadedModels load_models(const std::string& ckpt_path) {
  if (!fs::exists(ckpt_path))
    throw nefic::DependencyError(
        nefic::str_cat("checkpoint not found: ", ckpt_path));
  LoadedModels lm;
  lm.m = std::make_unique<nefic::Models<Scalar>>(0);
  lm.meta = nefic::load_checkpoint(ckpt_path, lm.m->ps);
  try {
    lm.cfg = nefic::parse_config(lm.meta.config_json);
  } catch (const nefic::Error&) {
    // Tolerate checkpoints with a minimal or foreign config echo.
    lm.cfg = nefic::RunConfig{};
  }
  return lm;
}

// Loads an image as a [1,3,H,W] tensor, center-cropping to dimension
// multiples of 64 (with a warning) as the codec requires.
nefic::Tensor<Scalar> load_image_multiple64(const std::string& path) {
  nefic::Tensor<Scalar> img =
      nefic::image_to_tensor<Scalar>(nefic::load_image(path));
  const int64_t h = img.shape()[1] - img.shape()[1] % 64;
  const int64_t w = img.shape()[2] - img.shape()[2] % 64;
  if (h < 64 || w < 64)
    throw nefic::IoError(nefic::str_cat("image '", path,
                                        "' is smaller than 64x64 (",
                                        img.shape()[2], "x", img.shape()[1],
                                        ")"));
  if (h != img.shape()[1] || w != img.shape()[2]) {
    std::fprintf(stderr,
                 "warning: %s is %lldx%lld; center-cropping to %lldx%lld "
                 "(dimensions must be multiples of 64)\n",
                 path.c_str(), (long long)img.shape()[2],
                 (long long)img.shape()[1], (long long)w, (long long)h);
    img = nefic::center_crop(img, h, w);
  }
  nefic::Tensor<Scalar> out({1, 3, h, w});
  std::copy(img.data(), img.data() + img.numel(), out.data());
  return out;
}

void save_frame(const nefic::Tensor<Scalar>& frame, const std::string& path) {
  nefic::Tensor<Scalar> p({frame.shape()[1], frame.shape()[2], frame.shape()[3]});
  std::copy(frame.data(), frame.data() + frame.numel(), p.data());
  nefic::save_image(path, nefic::tensor_to_image(p));
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good())
    throw nefic::IoError(nefic::str_cat("cannot read '", path, "'"));
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(is),
                              std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os.good())
    throw nefic::IoError(nefic::str_cat("cannot write '", path, "'"));
  os.write(reinterpret_cast<const char*>(bytes.data()),
           std::streamsize(bytes.size()));
}

// ---------------------------------------------------------------------------
// Subcommand bodies. Each returns a process exit code.
// ---------------------------------------------------------------------------

int cmd_train(const std::string& stage_s, const std::string& config_path,
              bool dry_run) {
  nefic::StageId stage;
  nefic::RunConfig cfg;
  try {
    stage = nefic::parse_stage(stage_s);
    cfg = config_path.empty() ? nefic::RunConfig{}
                              : nefic::load_config(config_path);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadConfig;
  }
  if (dry_run) {
    nefic::Models<Scalar> m(cfg.seed);
    const int64_t n = nefic::configure_trainables(m, stage);
    std::printf("config ok: stage=%s trainable_parameters=%lld\n",
                nefic::stage_name(stage), (long long)n);
    return 0;
  }
  try {
    nefic::run_stage<Scalar>(stage, cfg);
  } catch (const nefic::DependencyError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMissingCheckpoint;
  } catch (const nefic::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadConfig;
  }
  std::printf("done: %s checkpoint in %s\n", nefic::stage_name(stage),
              cfg.out_dir.c_str());
  return 0;
}

int cmd_compress(const std::string& image_path, const std::string& ckpt,
                 int lambda_id, const std::string& out_path) {
  try {
    nefic::lambda_from_id(lambda_id);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadLambda;
  }
  LoadedModels lm;
  try {
    lm = load_models(ckpt);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMissingCheckpoint;
  }
  nefic::Tensor<Scalar> img;
  try {
    img = load_image_multiple64(image_path);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadImage;
  }
  nefic::CompressResult<Scalar> res =
      nefic::compress_image(*lm.m, img, lambda_id, lm.cfg.flags);
  write_file(out_path, res.bytes);
  std::printf("%s: %lld bytes, bpp=%.6f (estimated %.1f bits, coded %lld bits)\n",
              out_path.c_str(), (long long)res.bytes.size(), res.bpp,
              res.estimated_bits, (long long)res.coded_bits);
  return 0;
}

int cmd_decompress(const std::string& nfic_path, const std::string& ckpt,
                   const std::string& out_path, const std::string& emit_anchor,
                   const std::string& emit_bypass) {
  LoadedModels lm;
  try {
    lm = load_models(ckpt);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitMissingCheckpoint;
  }
  try {
    const std::vector<uint8_t> bytes = read_file(nfic_path);
    const nefic::BitstreamContainer c = nefic::parse(bytes);
    if (int(c.lambda_id) != lm.cfg.lambda_id)
      std::fprintf(stderr,
                   "warning: stream was produced for rate point %d but the "
                   "checkpoint was trained at %d; output quality may suffer\n",
                   int(c.lambda_id), lm.cfg.lambda_id);
    nefic::DecompressResult<Scalar> dec =
        nefic::decompress_payload(*lm.m, bytes, lm.cfg.flags);
    save_frame(dec.final_frame, out_path);
    if (!emit_anchor.empty()) save_frame(dec.anchor_frame, emit_anchor);
    if (!emit_bypass.empty()) save_frame(dec.bypass_frame, emit_bypass);
  } catch (const nefic::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadStream;
  } catch (const nefic::CodingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadStream;
  } catch (const nefic::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadStream;
  }
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

int cmd_eval(const std::vector<std::string>& checkpoints,
             const std::string& images_dir, const std::string& out_csv) {
  std::vector<std::string> image_paths;
  try {
    image_paths = nefic::list_images(images_dir);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadImage;
  }
  if (image_paths.empty()) {
    std::fprintf(stderr, "error: no images in '%s'\n", images_dir.c_str());
    return kExitBadImage;
  }
  std::ofstream os(out_csv);
  if (!os.good()) {
    std::fprintf(stderr, "error: cannot write '%s'\n", out_csv.c_str());
    return 1;
  }
  os << "image,lambda_id,lambda_r,bpp,psnr,msssim,proxy,anchor_proxy,"
        "bypass_proxy\n";
  for (const std::string& ckpt : checkpoints) {
    LoadedModels lm;
    try {
      lm = load_models(ckpt);
    } catch (const nefic::Error& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitMissingCheckpoint;
    }
    for (const std::string& ip : image_paths) {
      nefic::Tensor<Scalar> img;
      try {
        img = load_image_multiple64(ip);
      } catch (const nefic::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitBadImage;
      }
      const nefic::EvalRow r =
          nefic::evaluate_image(*lm.m, img, lm.cfg.lambda_id, lm.cfg.flags);
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "%s,%d,%.6g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g",
                    fs::path(ip).filename().string().c_str(),
                    lm.cfg.lambda_id, lm.cfg.lambda_r(), r.bpp, r.psnr_db,
                    r.msssim_v, r.proxy, r.anchor_proxy, r.bypass_proxy);
      os << buf << "\n";
    }
    std::fprintf(stderr, "evaluated %s (%zu images)\n", ckpt.c_str(),
                 image_paths.size());
  }
  std::printf("wrote %s (%zu rows)\n", out_csv.c_str(),
              image_paths.size() * checkpoints.size());
  return 0;
}

nefic::RDCurve curve_from_csv(const std::string& path,
                              const std::string& metric) {
  const nefic::CsvTable t = nefic::read_csv(path);
  const auto pts = nefic::curve_from_table(t, "bpp", metric);
  nefic::RDCurve c;
  c.label = fs::path(path).stem().string();
  for (const auto& [bpp, q] : pts) {
    nefic::RDPoint p;
    p.bpp = bpp;
    p.metrics[metric] = q;
    c.points.push_back(p);
  }
  return c;
}

int cmd_bdrate(const std::string& anchor_csv, const std::string& test_csv,
               const std::string& metric) {
  try {
    const nefic::RDCurve a = curve_from_csv(anchor_csv, metric);
    const nefic::RDCurve t = curve_from_csv(test_csv, metric);
    std::string warning;
    double v = nefic::bd_rate(a, t, metric, &warning);
    if (!warning.empty())
      std::fprintf(stderr, "warning: %s\n", warning.c_str());
    v += 0.0;  // normalize -0.0
    std::printf("%.2f%%\n", v);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out_dir,
             bool frames) {
  try {
    fs::create_directories(out_dir);
    const std::vector<std::pair<std::string, std::string>> metrics = {
        {"psnr", "PSNR (dB)"},
        {"msssim", "MS-SSIM"},
        {"proxy", "perceptual proxy"}};
    for (const auto& [col, label] : metrics) {
      std::vector<nefic::Series> series;
      for (const std::string& path : csvs) {
        const nefic::CsvTable t = nefic::read_csv(path);
        if (t.col(col) < 0) continue;
        nefic::Series s;
        s.label = fs::path(path).stem().string();
        s.points = nefic::curve_from_table(t, "bpp", col);
        series.push_back(std::move(s));
      }
      if (series.empty()) continue;
      const std::string out = (fs::path(out_dir) / (col + ".svg")).string();
      nefic::write_line_chart(out, "rate-" + col, "bpp", label, series);
      std::printf("wrote %s\n", out.c_str());
    }
    if (frames) {
      // Three-frame comparison: anchor, bypass and final reconstruction
      // proxy curves from the first CSV that carries the per-frame columns.
      for (const std::string& path : csvs) {
        const nefic::CsvTable t = nefic::read_csv(path);
        if (t.col("anchor_proxy") < 0 || t.col("bypass_proxy") < 0) continue;
        std::vector<nefic::Series> series(3);
        series[0] = {"final", nefic::curve_from_table(t, "bpp", "proxy")};
        series[1] = {"anchor",
                     nefic::curve_from_table(t, "bpp", "anchor_proxy")};
        series[2] = {"bypass",
                     nefic::curve_from_table(t, "bpp", "bypass_proxy")};
        const std::string out = (fs::path(out_dir) / "frames.svg").string();
        nefic::write_line_chart(out, "frame comparison", "bpp",
                                "perceptual proxy", series);
        std::printf("wrote %s\n", out.c_str());
        break;
      }
    }
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

int cmd_gendata(const std::string& out_dir, int count, int side,
                uint64_t seed) {
  try {
    nefic::write_synth_corpus(out_dir, count, side, seed);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::printf("wrote %d %dx%d images to %s\n", count, side, side,
              out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nefic: two-frame predictive neural image codec"};
  app.require_subcommand(1);

  // train
  std::string train_stage, train_config;
  bool dry_run = false;
  auto* train = app.add_subcommand("train", "run one training stage");
  train->add_option("stage", train_stage, "vae | backbone | stage1 | stage2")
      ->required();
  train->add_option("--config,-f", train_config, "run config (JSON)");
  train->add_flag("--dry-run", dry_run,
                  "validate config, print trainable parameter count");

  // compress
  std::string c_image, c_ckpt, c_out = "out.nfic";
  int c_lambda = 3;
  auto* comp = app.add_subcommand("compress", "image -> .nfic");
  comp->add_option("image", c_image, "input PNG/PPM")->required();
  comp->add_option("--checkpoint,-c", c_ckpt, "trained checkpoint")
      ->required();
  comp->add_option("--lambda,-l", c_lambda, "rate-ladder index 0..5");
  comp->add_option("--out,-o", c_out, "output stream path");

  // decompress
  std::string d_nfic, d_ckpt, d_out = "out.png", d_anchor, d_bypass;
  auto* dec = app.add_subcommand("decompress", ".nfic -> image");
  dec->add_option("stream", d_nfic, "input .nfic")->required();
  dec->add_option("--checkpoint,-c", d_ckpt, "trained checkpoint")
      ->required();
  dec->add_option("--out,-o", d_out, "output image path");
  dec->add_option("--emit-anchor", d_anchor, "also write the anchor frame");
  dec->add_option("--emit-bypass", d_bypass,
                  "also write the directly-decoded bypass frame");

  // eval
  std::vector<std::string> e_ckpts;
  std::string e_images, e_out = "rd.csv";
  auto* ev = app.add_subcommand("eval", "rate-distortion sweep -> CSV");
  ev->add_option("checkpoints", e_ckpts, "one checkpoint per rate point")
      ->required();
  ev->add_option("--images,-i", e_images, "directory of test images")
      ->required();
  ev->add_option("--out,-o", e_out, "output CSV path");

  // bdrate
  std::string b_anchor, b_test, b_metric = "psnr";
  auto* bd = app.add_subcommand("bdrate", "rate difference of two RD curves");
  bd->add_option("anchor", b_anchor, "anchor curve CSV")->required();
  bd->add_option("test", b_test, "test curve CSV")->required();
  bd->add_option("--metric,-m", b_metric, "quality column (psnr|msssim|proxy)");

  // plot
  std::vector<std::string> p_csvs;
  std::string p_out = "plots";
  bool p_frames = false;
  auto* pl = app.add_subcommand("plot", "render RD curves as SVG");
  pl->add_option("csvs", p_csvs, "RD curve CSVs")->required();
  pl->add_option("--out,-o", p_out, "output directory");
  pl->add_flag("--frames", p_frames,
               "also render the anchor/bypass/final comparison");

  // gendata
  std::string g_out = "data/train";
  int g_count = 64, g_side = 128;
  uint64_t g_seed = 7;
  auto* gd = app.add_subcommand("gendata", "write a synthetic image corpus");
  gd->add_option("--out,-o", g_out, "output directory");
  gd->add_option("--count,-n", g_count, "number of images");
  gd->add_option("--side,-s", g_side, "square side length");
  gd->add_option("--seed", g_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_stage, train_config, dry_run);
    if (comp->parsed()) return cmd_compress(c_image, c_ckpt, c_lambda, c_out);
    if (dec->parsed())
      return cmd_decompress(d_nfic, d_ckpt, d_out, d_anchor, d_bypass);
    if (ev->parsed()) return cmd_eval(e_ckpts, e_images, e_out);
    if (bd->parsed()) return cmd_bdrate(b_anchor, b_test, b_metric);
    if (pl->parsed()) return cmd_plot(p_csvs, p_out, p_frames);
    if (gd->parsed()) return cmd_gendata(g_out, g_count, g_side, g_seed);
  } catch (const nefic::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
