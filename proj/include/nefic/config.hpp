// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_CONFIG_HPP_
#define NEFIC_CONFIG_HPP_

#include <array>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "nefic/common.hpp"

namespace nefic {

// Rate-penalty ladder. Containers store the index (lambda_id) so the decoder
// can warn when a bitstream was produced under a different rate point than
// the checkpoint it is being decoded with.
inline constexpr std::array<double, 6> kLambdaLadder = {5.0,  3.0, 1.7,
                                                        1.0,  0.5, 0.25};

inline double lambda_from_id(int id) {
  NEFIC_CHECK(id >= 0 && id < int(kLambdaLadder.size()), ConfigError,
              "lambda_id ", id, " outside [0,", kLambdaLadder.size() - 1, "]");
  return kLambdaLadder[size_t(id)];
}

enum class StageId { kVae, kBackbone, kStage1, kStage2 };

inline const char* stage_name(StageId s) {
  switch (s) {
    case StageId::kVae: return "vae";
    case StageId::kBackbone: return "backbone";
    case StageId::kStage1: return "stage1";
    case StageId::kStage2: return "stage2";
  }
  return "?";
}

inline StageId parse_stage(const std::string& s) {
  if (s == "vae") return StageId::kVae;
  if (s == "backbone") return StageId::kBackbone;
  if (s == "stage1") return StageId::kStage1;
  if (s == "stage2") return StageId::kStage2;
  throw ConfigError(str_cat("unknown training stage '", s,
                            "' (expected vae|backbone|stage1|stage2)"));
}

// Component toggles mirroring the ablation variants: conditional encoding,
// bypass refinement, auxiliary anchor loss, adversarial loss.
struct AblationFlags {
  bool cond_enc = true;
  bool bypass_refine = true;
  bool aux_loss = true;
  bool gan_loss = true;
};

// Full run configuration. Every field has a usable default; a config file
// only overrides what it names. Unknown or ill-typed fields are rejected
// with the offending field name.
struct RunConfig {
  uint64_t seed = 0;
  int64_t batch = 4;
  int lambda_id = 3;  // ladder index -> lambda_R = 1.0
  double lambda_aux = 0.1;

  std::string train_dir = "data/train";
  std::string val_dir = "data/val";
  std::string out_dir = "runs/default";
  // Fallback directory for prerequisite checkpoints not present in out_dir,
  // so several runs can branch off one shared pretraining.
  std::string init_dir;

  int crop_min = 64;
  int crop_max = 128;

  int64_t log_every = 50;
  int64_t val_every = 1000;
  int64_t checkpoint_every = 2000;
  int64_t val_images = 8;

  AblationFlags flags;

  int64_t vae_steps = 20000;
  double vae_lr = 1e-4;
  double vae_latent_reg = 1e-4;

  int64_t backbone_steps = 20000;
  double backbone_lr = 1e-4;
  double backbone_uncond_prob = 0.1;
  double backbone_blur_sigma = 2.0;

  int64_t stage1_steps = 2000;
  double stage1_lr = 1e-4;
  double stage1_lambda_mse = 5.0;
  double stage1_lambda_lpips = 1.0;

  int64_t stage2_steps = 10000;
  double stage2_lr = 1e-4;
  double stage2_lr_final = 1e-5;
  double stage2_lr_decay_frac = 0.9;
  double stage2_gan_start_frac = 0.7;
  double stage2_lambda_gan = 1.0;
  double stage2_lambda_mse = 2.5;
  double stage2_lambda_lpips = 0.5;
  double stage2_disc_lr = 1e-4;

  // Direct rate-weight override for experiments outside the ladder
  // (negative means "use the ladder entry"). Not part of the config file.
  double lambda_r_override = -1.0;

  double lambda_r() const {
    return lambda_r_override >= 0.0 ? lambda_r_override
                                    : lambda_from_id(lambda_id);
  }
  int64_t stage2_gan_start() const {
    return int64_t(stage2_gan_start_frac * double(stage2_steps));
  }
  int64_t stage2_lr_decay_step() const {
    return int64_t(stage2_lr_decay_frac * double(stage2_steps));
  }
};

namespace detail {

using json = nlohmann::json;

inline void require_keys(const json& j, const std::string& scope,
                         std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    NEFIC_CHECK(ok, ConfigError, "config: unknown field '",
                scope.empty() ? it.key() : scope + "." + it.key(), "'");
  }
}

template <class T>
void fetch(const json& j, const std::string& scope, const char* key, T* out) {
  if (!j.contains(key)) return;
  const std::string full = scope.empty() ? key : scope + "." + key;
  try {
    *out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(str_cat("config: field '", full, "' has the wrong type"));
  }
}

}  // namespace detail

// Parses a config from JSON text, applying overrides on top of defaults and
// validating the schema. NEFIC_SEED in the environment overrides the seed.
inline RunConfig parse_config(const std::string& text) {
  using detail::fetch;
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(str_cat("config: not valid JSON: ", e.what()));
  }
  NEFIC_CHECK(j.is_object(), ConfigError, "config: top level must be an object");
  detail::require_keys(j, "",
                       {"seed", "batch", "lambda_id", "lambda_aux", "data",
                        "crop", "log", "ablation", "vae", "backbone", "stage1",
                        "stage2"});
  RunConfig c;
  fetch(j, "", "seed", &c.seed);
  fetch(j, "", "batch", &c.batch);
  fetch(j, "", "lambda_id", &c.lambda_id);
  fetch(j, "", "lambda_aux", &c.lambda_aux);
  if (j.contains("data")) {
    const json& d = j.at("data");
    detail::require_keys(d, "data",
                         {"train_dir", "val_dir", "out_dir", "init_dir"});
    fetch(d, "data", "train_dir", &c.train_dir);
    fetch(d, "data", "val_dir", &c.val_dir);
    fetch(d, "data", "out_dir", &c.out_dir);
    fetch(d, "data", "init_dir", &c.init_dir);
  }
  if (j.contains("crop")) {
    const json& d = j.at("crop");
    detail::require_keys(d, "crop", {"min", "max"});
    fetch(d, "crop", "min", &c.crop_min);
    fetch(d, "crop", "max", &c.crop_max);
  }
  if (j.contains("log")) {
    const json& d = j.at("log");
    detail::require_keys(
        d, "log", {"log_every", "val_every", "checkpoint_every", "val_images"});
    fetch(d, "log", "log_every", &c.log_every);
    fetch(d, "log", "val_every", &c.val_every);
    fetch(d, "log", "checkpoint_every", &c.checkpoint_every);
    fetch(d, "log", "val_images", &c.val_images);
  }
  if (j.contains("ablation")) {
    const json& d = j.at("ablation");
    detail::require_keys(d, "ablation",
                         {"cond_enc", "bypass_refine", "aux_loss", "gan_loss"});
    fetch(d, "ablation", "cond_enc", &c.flags.cond_enc);
    fetch(d, "ablation", "bypass_refine", &c.flags.bypass_refine);
    fetch(d, "ablation", "aux_loss", &c.flags.aux_loss);
    fetch(d, "ablation", "gan_loss", &c.flags.gan_loss);
  }
  if (j.contains("vae")) {
    const json& d = j.at("vae");
    detail::require_keys(d, "vae", {"steps", "lr", "latent_reg"});
    fetch(d, "vae", "steps", &c.vae_steps);
    fetch(d, "vae", "lr", &c.vae_lr);
    fetch(d, "vae", "latent_reg", &c.vae_latent_reg);
  }
  if (j.contains("backbone")) {
    const json& d = j.at("backbone");
    detail::require_keys(d, "backbone",
                         {"steps", "lr", "uncond_prob", "blur_sigma"});
    fetch(d, "backbone", "steps", &c.backbone_steps);
    fetch(d, "backbone", "lr", &c.backbone_lr);
    fetch(d, "backbone", "uncond_prob", &c.backbone_uncond_prob);
    fetch(d, "backbone", "blur_sigma", &c.backbone_blur_sigma);
  }
  if (j.contains("stage1")) {
    const json& d = j.at("stage1");
    detail::require_keys(d, "stage1",
                         {"steps", "lr", "lambda_mse", "lambda_lpips"});
    fetch(d, "stage1", "steps", &c.stage1_steps);
    fetch(d, "stage1", "lr", &c.stage1_lr);
    fetch(d, "stage1", "lambda_mse", &c.stage1_lambda_mse);
    fetch(d, "stage1", "lambda_lpips", &c.stage1_lambda_lpips);
  }
  if (j.contains("stage2")) {
    const json& d = j.at("stage2");
    detail::require_keys(d, "stage2",
                         {"steps", "lr", "lr_final", "lr_decay_frac",
                          "gan_start_frac", "lambda_gan", "lambda_mse",
                          "lambda_lpips", "disc_lr"});
    fetch(d, "stage2", "steps", &c.stage2_steps);
    fetch(d, "stage2", "lr", &c.stage2_lr);
    fetch(d, "stage2", "lr_final", &c.stage2_lr_final);
    fetch(d, "stage2", "lr_decay_frac", &c.stage2_lr_decay_frac);
    fetch(d, "stage2", "gan_start_frac", &c.stage2_gan_start_frac);
    fetch(d, "stage2", "lambda_gan", &c.stage2_lambda_gan);
    fetch(d, "stage2", "lambda_mse", &c.stage2_lambda_mse);
    fetch(d, "stage2", "lambda_lpips", &c.stage2_lambda_lpips);
    fetch(d, "stage2", "disc_lr", &c.stage2_disc_lr);
  }

  if (const char* env = std::getenv("NEFIC_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    NEFIC_CHECK(end != env && *end == '\0', ConfigError,
                "NEFIC_SEED must be an unsigned integer, got '", env, "'");
    c.seed = uint64_t(v);
  }

  // Invariants.
  NEFIC_CHECK(c.batch >= 1, ConfigError, "config: field 'batch' must be >= 1");
  NEFIC_CHECK(c.lambda_id >= 0 && c.lambda_id < int(kLambdaLadder.size()),
              ConfigError, "config: field 'lambda_id' must be in [0,",
              kLambdaLadder.size() - 1, "]");
  NEFIC_CHECK(c.lambda_aux >= 0, ConfigError,
              "config: field 'lambda_aux' must be >= 0");
  NEFIC_CHECK(c.crop_min >= 64 && c.crop_min % 64 == 0, ConfigError,
              "config: field 'crop.min' must be a positive multiple of 64");
  NEFIC_CHECK(c.crop_max >= c.crop_min && c.crop_max % 64 == 0, ConfigError,
              "config: field 'crop.max' must be a multiple of 64 >= crop.min");
  NEFIC_CHECK(c.log_every >= 1 && c.val_every >= 1 && c.checkpoint_every >= 1,
              ConfigError, "config: cadence fields must be >= 1");
  NEFIC_CHECK(c.vae_steps >= 1 && c.backbone_steps >= 1 &&
                  c.stage1_steps >= 1 && c.stage2_steps >= 1,
              ConfigError, "config: step counts must be >= 1");
  NEFIC_CHECK(c.vae_lr > 0 && c.backbone_lr > 0 && c.stage1_lr > 0 &&
                  c.stage2_lr > 0 && c.stage2_lr_final > 0 && c.stage2_disc_lr > 0,
              ConfigError, "config: learning rates must be > 0");
  NEFIC_CHECK(c.stage1_lambda_mse >= 0 && c.stage1_lambda_lpips >= 0 &&
                  c.stage2_lambda_gan >= 0 && c.stage2_lambda_mse >= 0 &&
                  c.stage2_lambda_lpips >= 0,
              ConfigError, "config: loss weights must be >= 0");
  NEFIC_CHECK(c.stage2_gan_start_frac >= 0 && c.stage2_gan_start_frac < 1.0,
              ConfigError,
              "config: field 'stage2.gan_start_frac' must be in [0,1)");
  NEFIC_CHECK(c.stage2_lr_decay_frac > 0 && c.stage2_lr_decay_frac <= 1.0,
              ConfigError,
              "config: field 'stage2.lr_decay_frac' must be in (0,1]");
  NEFIC_CHECK(c.backbone_uncond_prob >= 0 && c.backbone_uncond_prob <= 1,
              ConfigError,
              "config: field 'backbone.uncond_prob' must be in [0,1]");
  NEFIC_CHECK(c.backbone_blur_sigma > 0, ConfigError,
              "config: field 'backbone.blur_sigma' must be > 0");
  NEFIC_CHECK(c.val_images >= 1, ConfigError,
              "config: field 'log.val_images' must be >= 1");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  NEFIC_CHECK(f.good(), IoError, "cannot open config '", path, "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

// Serializes the resolved configuration so runs are self-describing: every
// checkpoint and metrics log embeds the exact settings that produced it.
inline std::string config_to_json(const RunConfig& c) {
  detail::json j;
  j["seed"] = c.seed;
  j["batch"] = c.batch;
  j["lambda_id"] = c.lambda_id;
  j["lambda_aux"] = c.lambda_aux;
  j["data"] = {{"train_dir", c.train_dir},
               {"val_dir", c.val_dir},
               {"out_dir", c.out_dir},
               {"init_dir", c.init_dir}};
  j["crop"] = {{"min", c.crop_min}, {"max", c.crop_max}};
  j["log"] = {{"log_every", c.log_every},
              {"val_every", c.val_every},
              {"checkpoint_every", c.checkpoint_every},
              {"val_images", c.val_images}};
  j["ablation"] = {{"cond_enc", c.flags.cond_enc},
                   {"bypass_refine", c.flags.bypass_refine},
                   {"aux_loss", c.flags.aux_loss},
                   {"gan_loss", c.flags.gan_loss}};
  j["vae"] = {{"steps", c.vae_steps},
              {"lr", c.vae_lr},
              {"latent_reg", c.vae_latent_reg}};
  j["backbone"] = {{"steps", c.backbone_steps},
                   {"lr", c.backbone_lr},
                   {"uncond_prob", c.backbone_uncond_prob},
                   {"blur_sigma", c.backbone_blur_sigma}};
  j["stage1"] = {{"steps", c.stage1_steps},
                 {"lr", c.stage1_lr},
                 {"lambda_mse", c.stage1_lambda_mse},
                 {"lambda_lpips", c.stage1_lambda_lpips}};
  j["stage2"] = {{"steps", c.stage2_steps},
                 {"lr", c.stage2_lr},
                 {"lr_final", c.stage2_lr_final},
                 {"lr_decay_frac", c.stage2_lr_decay_frac},
                 {"gan_start_frac", c.stage2_gan_start_frac},
                 {"lambda_gan", c.stage2_lambda_gan},
                 {"lambda_mse", c.stage2_lambda_mse},
                 {"lambda_lpips", c.stage2_lambda_lpips},
                 {"disc_lr", c.stage2_disc_lr}};
  return j.dump(2);
}

}  // namespace nefic

#endif  // NEFIC_CONFIG_HPP_
