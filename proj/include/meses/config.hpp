#pragma once

// Run configuration: plain structs for every module plus the key = value
// file format (see docs/formats.md) with profile overlays.

#include <cstdint>
#include <map>
#include <string>

#include "json.hpp"
#include "meses/perturb.hpp"
#include "meses/synthgen.hpp"

namespace meses {

enum class Period { daily, weekly, none };
const char* period_name(Period p);
Period parse_period(const std::string& s);

struct ModelConfig {
  std::size_t d = 40;       // model width, F * d_f
  std::size_t F = 5;        // feature tokens per event (4 drops the entity token)
  std::size_t L = 2;        // factorized blocks
  std::size_t H = 2;        // attention heads
  std::size_t T = 16;       // window length
  std::size_t C = 4;        // clique size, focal + C-1 peers
  std::size_t n_scales = 32;
  double lambda_min = 1e-2;
  double lambda_max = 2.0;
  Period period = Period::daily;
  std::size_t proto_rank = 8;   // h
  std::size_t proj_hidden = 0;  // h_proj; 0 means d
  double min_overlap = 0.0;
  bool bypass_cooc = false;
  bool drop_entity_token = false;  // prototype kept only as contrastive target

  std::size_t d_f() const { return d / F; }
  std::size_t h_proj() const { return proj_hidden ? proj_hidden : d; }
  void validate() const;
};

struct LossConfig {
  double gamma = 0.5;
  double beta = 0.07;
  bool prototype_loss = true;
};

struct OptimConfig {
  double peak_lr = 2e-4;
  double eta_min = 1e-6;
  double weight_decay = 1e-3;
  double clip_norm = 1.0;
};

struct TrainConfig {
  OptimConfig optim;
  std::size_t batch = 64;
  std::size_t val_batch = 256;
  std::size_t max_epochs = 40;
  std::size_t patience = 10;
  double ema_factor = 0.1;
  bool strict = true;  // single-worker data preparation
  std::uint64_t val_seed = 1234;
};

struct FinetuneConfig {
  double lr_scale = 0.5;  // fine-tune peak lr = lr_scale * pretrain peak
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  std::size_t n_neg = 256;
  double poi_temperature = 0.1;
  std::size_t gmm_k = 3;
  double swap_prob = 0.3;
};

struct SplitConfig {
  double train_frac = 0.9;
  double val_frac_of_train = 0.2;
};

struct RunConfig {
  std::string profile = "desk";
  ModelConfig model;
  LossConfig loss;
  PerturbConfig perturb;
  TrainConfig train;
  FinetuneConfig finetune;
  SplitConfig split;
  GenConfig gen;
  std::uint64_t seed = 7;

  nlohmann::json to_json() const;
  /// FNV-1a 64 over the canonical key = value dump, as 16 hex digits.
  std::string hash() const;
};

/// Flat "section.key" -> value map.
using ConfigMap = std::map<std::string, std::string>;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses "key = value" lines grouped under "[section]" headers. '#' starts
/// a comment. Later keys override earlier ones.
ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigMap load_config_file(const std::string& path);
/// Applies `overlay` on top of the defaults in `cfg`; unknown keys throw.
void apply_config(RunConfig& cfg, const ConfigMap& overlay);
ConfigMap to_config_map(const RunConfig& cfg);
std::string dump_config(const RunConfig& cfg);

/// Built-in defaults for "desk" and "paper", optionally read from
/// profiles/<name>.cfg when `profile_dir` is given and the file exists.
RunConfig profile_config(const std::string& name, const std::string& profile_dir = "");

std::uint64_t fnv1a64(const std::string& data);
std::string hex64(std::uint64_t v);

}  // namespace meses
