#include "meses/config.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace meses {

const char* period_name(Period p) {
  switch (p) {
    case Period::daily: return "daily";
    case Period::weekly: return "weekly";
    case Period::none: return "none";
  }
  return "?";
}

Period parse_period(const std::string& s) {
  if (s == "daily") return Period::daily;
  if (s == "weekly") return Period::weekly;
  if (s == "none") return Period::none;
  throw ConfigError("unknown period: " + s);
}

void ModelConfig::validate() const {
  if (F != 4 && F != 5) throw ConfigError("model.F must be 4 or 5");
  if (drop_entity_token != (F == 4)) throw ConfigError("model.drop_entity_token must be set exactly when F = 4");
  if (d == 0 || d % F) throw ConfigError("model.d must be a positive multiple of F");
  if (H == 0 || d_f() % H) throw ConfigError("model.H must divide d_f = d/F");
  if (T < 1 || C < 1 || n_scales < 1) throw ConfigError("model.T, model.C, model.n_scales must be >= 1");
  if (n_scales > 1 && !(lambda_min > 0 && lambda_max > lambda_min))
    throw ConfigError("need 0 < lambda_min < lambda_max");
  if (proto_rank < 1) throw ConfigError("model.proto_rank must be >= 1");
  if (!(min_overlap >= 0 && min_overlap <= 1)) throw ConfigError("model.min_overlap must lie in [0,1]");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt_double(double v) {
  // Shortest form that parses back to the same value.
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// One binding per key: how to read it from a string and print it back.
struct Binding {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

double to_double(const std::string& k, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(k + ": expected a number, got \"" + v + "\"");
  }
}

std::uint64_t to_uint(const std::string& k, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(k + ": expected a non-negative integer, got \"" + v + "\"");
  return std::stoull(v);
}

bool to_bool(const std::string& k, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(k + ": expected true/false, got \"" + v + "\"");
}

template <class T, class M>
Binding num(M RunConfig::*sect, T M::*field) {
  return {[sect, field](RunConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<T, double>) (c.*sect).*field = to_double("", v);
            else if constexpr (std::is_same_v<T, bool>) (c.*sect).*field = to_bool("", v);
            else (c.*sect).*field = static_cast<T>(to_uint("", v));
          },
          [sect, field](const RunConfig& c) {
            const T& x = (c.*sect).*field;
            if constexpr (std::is_same_v<T, double>) return fmt_double(x);
            else if constexpr (std::is_same_v<T, bool>) return std::string(x ? "true" : "false");
            else return std::to_string(x);
          }};
}

const std::map<std::string, Binding>& bindings() {
  static const std::map<std::string, Binding> b = [] {
    std::map<std::string, Binding> m;
    using R = RunConfig;
    m["model.d"] = num(&R::model, &ModelConfig::d);
    m["model.F"] = num(&R::model, &ModelConfig::F);
    m["model.L"] = num(&R::model, &ModelConfig::L);
    m["model.H"] = num(&R::model, &ModelConfig::H);
    m["model.T"] = num(&R::model, &ModelConfig::T);
    m["model.C"] = num(&R::model, &ModelConfig::C);
    m["model.n_scales"] = num(&R::model, &ModelConfig::n_scales);
    m["model.lambda_min"] = num(&R::model, &ModelConfig::lambda_min);
    m["model.lambda_max"] = num(&R::model, &ModelConfig::lambda_max);
    m["model.period"] = {[](R& c, const std::string& v) { c.model.period = parse_period(v); },
                         [](const R& c) { return std::string(period_name(c.model.period)); }};
    m["model.proto_rank"] = num(&R::model, &ModelConfig::proto_rank);
    m["model.proj_hidden"] = num(&R::model, &ModelConfig::proj_hidden);
    m["model.min_overlap"] = num(&R::model, &ModelConfig::min_overlap);
    m["model.bypass_cooc"] = num(&R::model, &ModelConfig::bypass_cooc);
    m["model.drop_entity_token"] = num(&R::model, &ModelConfig::drop_entity_token);
    m["loss.gamma"] = num(&R::loss, &LossConfig::gamma);
    m["loss.beta"] = num(&R::loss, &LossConfig::beta);
    m["loss.prototype_loss"] = num(&R::loss, &LossConfig::prototype_loss);
    m["perturb.p_norm"] = num(&R::perturb, &PerturbConfig::p_norm);
    m["perturb.flag_rate"] = num(&R::perturb, &PerturbConfig::flag_rate);
    m["perturb.mode_loc"] = num(&R::perturb, &PerturbConfig::mode_loc);
    m["perturb.mode_time"] = num(&R::perturb, &PerturbConfig::mode_time);
    m["perturb.mode_both"] = num(&R::perturb, &PerturbConfig::mode_both);
    m["perturb.max_redraws"] = {[](R& c, const std::string& v) { c.perturb.max_redraws = static_cast<int>(to_uint("", v)); },
                                [](const R& c) { return std::to_string(c.perturb.max_redraws); }};
    m["train.peak_lr"] = {[](R& c, const std::string& v) { c.train.optim.peak_lr = to_double("", v); },
                          [](const R& c) { return fmt_double(c.train.optim.peak_lr); }};
    m["train.eta_min"] = {[](R& c, const std::string& v) { c.train.optim.eta_min = to_double("", v); },
                          [](const R& c) { return fmt_double(c.train.optim.eta_min); }};
    m["train.weight_decay"] = {[](R& c, const std::string& v) { c.train.optim.weight_decay = to_double("", v); },
                               [](const R& c) { return fmt_double(c.train.optim.weight_decay); }};
    m["train.clip_norm"] = {[](R& c, const std::string& v) { c.train.optim.clip_norm = to_double("", v); },
                            [](const R& c) { return fmt_double(c.train.optim.clip_norm); }};
    m["train.batch"] = num(&R::train, &TrainConfig::batch);
    m["train.val_batch"] = num(&R::train, &TrainConfig::val_batch);
    m["train.max_epochs"] = num(&R::train, &TrainConfig::max_epochs);
    m["train.patience"] = num(&R::train, &TrainConfig::patience);
    m["train.ema_factor"] = num(&R::train, &TrainConfig::ema_factor);
    m["train.strict"] = num(&R::train, &TrainConfig::strict);
    m["train.val_seed"] = num(&R::train, &TrainConfig::val_seed);
    m["finetune.lr_scale"] = num(&R::finetune, &FinetuneConfig::lr_scale);
    m["finetune.max_epochs"] = num(&R::finetune, &FinetuneConfig::max_epochs);
    m["finetune.patience"] = num(&R::finetune, &FinetuneConfig::patience);
    m["finetune.n_neg"] = num(&R::finetune, &FinetuneConfig::n_neg);
    m["finetune.poi_temperature"] = num(&R::finetune, &FinetuneConfig::poi_temperature);
    m["finetune.gmm_k"] = num(&R::finetune, &FinetuneConfig::gmm_k);
    m["finetune.swap_prob"] = num(&R::finetune, &FinetuneConfig::swap_prob);
    m["split.train_frac"] = num(&R::split, &SplitConfig::train_frac);
    m["split.val_frac_of_train"] = num(&R::split, &SplitConfig::val_frac_of_train);
    m["gen.n_entities"] = num(&R::gen, &GenConfig::n_entities);
    m["gen.n_contexts"] = num(&R::gen, &GenConfig::n_contexts);
    m["gen.n_activities"] = num(&R::gen, &GenConfig::n_activities);
    m["gen.signature_size"] = num(&R::gen, &GenConfig::signature_size);
    m["gen.events_per_entity"] = num(&R::gen, &GenConfig::events_per_entity);
    m["gen.hotspot_count"] = num(&R::gen, &GenConfig::hotspot_count);
    m["gen.hour_profile_spread"] = num(&R::gen, &GenConfig::hour_profile_spread);
    m["gen.anomaly_rate"] = num(&R::gen, &GenConfig::anomaly_rate);
    m["gen.anomalous_entity_frac"] = num(&R::gen, &GenConfig::anomalous_entity_frac);
    m["gen.hotspot_weight"] = num(&R::gen, &GenConfig::hotspot_weight);
    m["gen.point_event_rate"] = num(&R::gen, &GenConfig::point_event_rate);
    m["gen.disjoint_home_sets"] = num(&R::gen, &GenConfig::disjoint_home_sets);
    m["run.seed"] = {[](R& c, const std::string& v) { c.seed = to_uint("", v); },
                     [](const R& c) { return std::to_string(c.seed); }};
    return m;
  }();
  return b;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    out[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void apply_config(RunConfig& cfg, const ConfigMap& overlay) {
  const auto& b = bindings();
  for (const auto& [k, v] : overlay) {
    if (k == "run.profile") {
      cfg.profile = v;
      continue;
    }
    auto it = b.find(k);
    if (it == b.end()) throw ConfigError("unknown config key: " + k);
    try {
      it->second.set(cfg, v);
    } catch (const ConfigError& e) {
      throw ConfigError(k + ": " + e.what());
    }
  }
  cfg.model.validate();
}

ConfigMap to_config_map(const RunConfig& cfg) {
  ConfigMap m;
  for (const auto& [k, b] : bindings()) m[k] = b.get(cfg);
  m["run.profile"] = cfg.profile;
  return m;
}

std::string dump_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& [k, v] : to_config_map(cfg)) {
    const auto dot = k.find('.');
    const std::string s = k.substr(0, dot);
    if (s != section) {
      out += (out.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += k.substr(dot + 1) + " = " + v + "\n";
  }
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : to_config_map(*this)) j[k] = v;
  return j;
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(dump_config(*this))); }

RunConfig profile_config(const std::string& name, const std::string& profile_dir) {
  RunConfig cfg;
  cfg.profile = name;
  if (name == "desk") {
    // A peak rate of 2e-4 suits d = 1040; at d = 40 it barely moves the
    // noise head within the desk epoch budget.
    cfg.train.optim.peak_lr = 2e-3;
  } else if (name == "paper") {
    cfg.model.d = 1040;
    cfg.model.L = 6;
    cfg.model.H = 4;
    cfg.model.T = 32;
    cfg.model.C = 8;
    cfg.model.proto_rank = 32;
    cfg.model.lambda_min = 1e-6;
    cfg.train.max_epochs = 200;
    cfg.train.patience = 20;
  } else if (profile_dir.empty()) {
    throw ConfigError("unknown profile: " + name);
  }
  if (!profile_dir.empty()) {
    const auto path = std::filesystem::path(profile_dir) / (name + ".cfg");
    if (std::filesystem::exists(path)) apply_config(cfg, load_config_file(path.string()));
    else if (name != "desk" && name != "paper") throw ConfigError("unknown profile: " + name);
  }
  cfg.profile = name;
  cfg.model.validate();
  return cfg;
}

}  // namespace meses
