// Command-line pipeline: generate -> index -> pretrain -> finetune -> score -> evaluate.

#include <spdlog/spdlog.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "meses/checkpoint.hpp"
#include "meses/gradcheck.hpp"
#include "meses/inference.hpp"
#include "meses/kernels.hpp"
#include "meses/synthgen.hpp"

using namespace meses;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 1, kData = 2, kNumerical = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config, profile = "desk", profile_dir, out, data, checkpoint, scores, task = "anomaly",
                      perturb = "structural", head, partition = "train";
  std::uint64_t seed = 7;
  bool seed_given = false, bypass_cooc = false, fuse = false;
  std::size_t coords = 500;
};

RunConfig resolve_config(const Options& o) {
  std::string dir = o.profile_dir;
  if (dir.empty() && fs::exists("profiles")) dir = "profiles";
  RunConfig cfg = profile_config(o.profile, dir);
  if (!o.config.empty()) apply_config(cfg, load_config_file(o.config));
  if (o.seed_given) {
    cfg.seed = o.seed;
    cfg.gen.seed = o.seed;
  }
  return cfg;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

void require(const std::string& v, const char* flag) {
  if (v.empty()) throw UsageError(std::string("missing required option ") + flag);
}

std::string events_path(const std::string& dir) { return (fs::path(dir) / "events.jsonl").string(); }
std::string substrate_path(const std::string& dir) { return (fs::path(dir) / "substrate.jsonl").string(); }

Corpus load_data(const std::string& dir) { return load_corpus(events_path(dir), substrate_path(dir)); }

int cmd_generate(const Options& o) {
  require(o.out, "--out");
  const RunConfig cfg = resolve_config(o);
  Generated gen = generate(cfg.gen);
  const CorpusSplit split = temporal_split(gen.corpus.events, cfg.split.train_frac, cfg.split.val_frac_of_train);
  Rng rng = derive_rng(cfg.gen.seed, {0x706c616e74ULL});
  Planted planted = plant_inserted_visits(gen.corpus.events, split.test, gen.corpus.substrate, gen.truth,
                                          cfg.gen.anomaly_rate, cfg.gen.anomalous_entity_frac,
                                          cfg.gen.hour_profile_spread, rng);
  gen.corpus.events = std::move(planted.events);
  gen.corpus.labels = AnomalyLabels(std::move(planted.labels));
  fs::create_directories(o.out);
  save_substrate(substrate_path(o.out), gen.corpus.substrate);
  save_events(events_path(o.out), gen.corpus);
  write_json((fs::path(o.out) / "manifest.json").string(),
             {{"stage", "generate"},
              {"seed", cfg.gen.seed},
              {"config_hash", cfg.hash()},
              {"config", cfg.to_json()},
              {"n_events", gen.corpus.events.size()},
              {"corpus_hash", file_hash(events_path(o.out))}});
  spdlog::info("wrote {} events to {}", gen.corpus.events.size(), o.out);
  return kOk;
}

std::vector<std::size_t> partition_rows(const CorpusSplit& s, Partition p, std::size_t n) {
  switch (p) {
    case Partition::train: return s.train_proper;
    case Partition::val: return s.val;
    case Partition::test: return s.test;
    case Partition::all: {
      std::vector<std::size_t> r(n);
      for (std::size_t i = 0; i < n; ++i) r[i] = i;
      return r;
    }
  }
  return {};
}

int cmd_index(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  const RunConfig cfg = resolve_config(o);
  const Corpus c = load_data(o.data);
  const Partition p = parse_partition(o.partition);
  const CorpusSplit split = temporal_split(c.events, cfg.split.train_frac, cfg.split.val_frac_of_train);
  const CoocIndex idx = CoocIndex::build(c.events, partition_rows(split, p, c.events.size()), c.substrate.size(), p);
  idx.save(o.out);
  write_json(o.out + ".manifest.json", {{"stage", "index"},
                                        {"partition", partition_name(p)},
                                        {"config_hash", cfg.hash()},
                                        {"seed", cfg.seed},
                                        {"corpus_hash", file_hash(events_path(o.data))},
                                        {"n_events", idx.n_events()}});
  spdlog::info("indexed {} {} events into {} buckets", idx.n_events(), partition_name(p), idx.n_buckets());
  return kOk;
}

EpochCallback jsonl_log(const std::string& path, std::ofstream& out) {
  out.open(path);
  if (!out) throw DataError("cannot write " + path);
  return [&out](const EpochLog& e) { out << e.to_json().dump() << '\n' << std::flush; };
}

int cmd_pretrain(const Options& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  RunConfig cfg = resolve_config(o);
  if (o.bypass_cooc) cfg.model.bypass_cooc = true;
  const Corpus c = load_data(o.data);
  const TrainData data = make_train_data(c.events, c.substrate, cfg.split);
  Model model(cfg.model, cfg.loss, c.n_entities(), c.substrate.size(), c.substrate.n_activities, cfg.seed);
  std::ofstream log;
  const TrainResult r = pretrain(model, data, cfg, cfg.seed, jsonl_log(o.out + ".log.jsonl", log));
  json m = model_manifest(model, cfg, "pretrain", cfg.seed);
  m["corpus_hash"] = file_hash(events_path(o.data));
  m["best_epoch"] = r.best_epoch;
  m["epochs_run"] = r.epochs.size();
  save_model(o.out, model, m);
  spdlog::info("pretrained {} epochs (best {}), checkpoint {}", r.epochs.size(), r.best_epoch, o.out);
  return kOk;
}

ConfigMap overrides(const Options& o) {
  ConfigMap m;
  if (o.bypass_cooc) m["model.bypass_cooc"] = "true";
  return m;
}

int cmd_finetune(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.data, "--data");
  require(o.out, "--out");
  RunConfig cfg;
  json src;
  auto model = load_model(o.checkpoint, cfg, &src, overrides(o));
  // Training budgets come from the active profile/config, the model from the checkpoint.
  const RunConfig active = resolve_config(o);
  cfg.finetune = active.finetune;
  cfg.train.max_epochs = active.train.max_epochs;
  const std::uint64_t seed = o.seed_given ? o.seed : cfg.seed;
  const Task task = parse_task(o.task);
  const PerturbKind pk = parse_perturb_kind(o.perturb);
  const Corpus c = load_data(o.data);
  if (c.n_entities() > model->n_entities() || c.substrate.size() != model->n_contexts())
    throw DataError("corpus does not match the checkpoint's entity/context sets");
  const TrainData data = make_train_data(c.events, c.substrate, cfg.split);
  std::ofstream log;
  const TrainResult r = finetune(*model, data, cfg, task, pk, seed, jsonl_log(o.out + ".log.jsonl", log));
  json m = model_manifest(*model, cfg, "finetune", seed);
  m["task"] = task_name(task);
  m["perturb"] = perturb_kind_name(pk);
  m["parent_config_hash"] = src.value("config_hash", "");
  m["corpus_hash"] = file_hash(events_path(o.data));
  m["best_epoch"] = r.best_epoch;
  save_model(o.out, *model, m);
  spdlog::info("fine-tuned {} for {} epochs (best {}), checkpoint {}", task_name(task), r.epochs.size(),
               r.best_epoch, o.out);
  return kOk;
}

int cmd_score(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.data, "--data");
  require(o.out, "--out");
  RunConfig cfg;
  json ck;
  auto model = load_model(o.checkpoint, cfg, &ck, overrides(o));
  const Corpus c = load_data(o.data);
  const CorpusSplit split = temporal_split(c.events, cfg.split.train_frac, cfg.split.val_frac_of_train);
  const CoocIndex idx = CoocIndex::build(c.events, split.test, c.substrate.size(), Partition::test);
  const PeerSource peers{&idx, &c.events, cfg.model.min_overlap};
  std::ofstream out(o.out);
  if (!out) throw DataError("cannot write " + o.out);
  json manifest = {{"stage", "score"},
                   {"config_hash", cfg.hash()},
                   {"seed", ck.value("seed", 0)},
                   {"corpus_hash", file_hash(events_path(o.data))},
                   {"checkpoint", o.checkpoint}};

  if (parse_task(o.task) == Task::poi) {
    const auto q = next_visit_queries(c.events, split.test, cfg.model.T);
    const auto nv = run_next_visit(*model, q, peers, c.substrate);
    for (std::size_t i = 0; i < nv.targets.size(); ++i) {
      const auto& w = q.windows[i];
      const auto& m = nv.mixtures[i];
      out << json{{"event_key", w.rows[w.n_real() - 1]},
                  {"target", nv.targets[i]},
                  {"delta", nv.deltas[i]},
                  {"poi_scores", nv.poi_scores[i]},
                  {"gmm", {{"weight", m.weight}, {"mean", m.mean}, {"scale", m.scale}}}}
                 .dump()
          << '\n';
    }
    manifest["kind"] = "next-visit";
  } else {
    const auto windows = chunk_windows(c.events, split.test, cfg.model.T);
    const EventOutputs ev = run_windows(*model, windows, peers, c.substrate);
    std::string head = o.head;
    if (head.empty()) head = model->anomaly_head() ? "anomaly" : "noise";
    std::vector<double> primary;
    if (head == "anomaly") {
      if (!model->anomaly_head()) throw UsageError("checkpoint has no anomaly head");
      primary = ev.anomaly_logit;
    } else if (head == "noise") {
      primary = ev.noise_logit;
    } else if (head != "prototype") {
      throw UsageError("unknown head: " + head);
    }
    std::vector<double> proto(ev.size());
    for (std::size_t i = 0; i < ev.size(); ++i) proto[i] = -ev.proto_cos[i];
    std::vector<double> score = head == "prototype" ? proto : primary;
    if (o.fuse) {
      if (head == "prototype") throw UsageError("--fuse combines a logit head with the prototype score");
      score = rank_fuse(primary, proto);
      head += "+prototype";
    }
    for (std::size_t i = 0; i < ev.size(); ++i)
      out << json{{"event_key", ev.rows[i]}, {"entity_id", ev.entity[i]}, {"score", score[i]}}.dump() << '\n';
    manifest["kind"] = "event";
    manifest["head"] = head;
  }
  write_json(o.out + ".manifest.json", manifest);
  spdlog::info("scores written to {}", o.out);
  return kOk;
}

int cmd_evaluate(const Options& o) {
  require(o.scores, "--scores");
  require(o.data, "--data");
  const json sm = read_json(o.scores + ".manifest.json");
  const std::string corpus_hash = file_hash(events_path(o.data));
  if (sm.value("corpus_hash", "") != corpus_hash)
    throw DataError("scores were produced on a different corpus (hash mismatch)");
  const Corpus c = load_data(o.data);
  std::ifstream in(o.scores);
  if (!in) throw DataError("cannot open " + o.scores);
  json report = {{"stage", "evaluate"}, {"config_hash", sm.value("config_hash", "")}, {"corpus_hash", corpus_hash},
                 {"seed", sm.value("seed", 0)}};
  std::string line;
  std::size_t lineno = 0;
  auto parse = [&](const std::string& l) {
    try {
      return json::parse(l);
    } catch (const json::exception& e) {
      throw DataError(o.scores + ":" + std::to_string(lineno) + ": " + e.what());
    }
  };
  if (sm.value("kind", "") == "next-visit") {
    std::vector<std::vector<double>> scores;
    std::vector<std::size_t> targets;
    std::vector<Mixture> mix;
    std::vector<double> deltas;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = parse(line);
      scores.push_back(j.at("poi_scores").get<std::vector<double>>());
      targets.push_back(j.at("target").get<std::size_t>());
      deltas.push_back(j.at("delta").get<double>());
      const json& g = j.at("gmm");
      mix.push_back({g.at("weight").get<std::vector<double>>(), g.at("mean").get<std::vector<double>>(),
                     g.at("scale").get<std::vector<double>>()});
    }
    report["metrics"] = {{"hit@1", hit_at_k(scores, targets, 1)},   {"hit@5", hit_at_k(scores, targets, 5)},
                         {"hit@10", hit_at_k(scores, targets, 10)}, {"mrr", mrr(scores, targets)},
                         {"t_pm60", t_pm60(mix, deltas)},           {"n_queries", scores.size()}};
  } else {
    if (!c.labels.present()) throw DataError("corpus carries no anomaly labels");
    const auto& labels = c.labels.reveal();
    std::vector<double> scores;
    std::vector<std::uint8_t> y;
    std::vector<std::uint32_t> groups;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const json j = parse(line);
      const auto key = j.at("event_key").get<std::int64_t>();
      if (key < 0 || static_cast<std::size_t>(key) >= labels.size())
        throw DataError(o.scores + ":" + std::to_string(lineno) + ": event_key out of range");
      scores.push_back(j.at("score").get<double>());
      y.push_back(labels[static_cast<std::size_t>(key)]);
      groups.push_back(c.events[static_cast<std::size_t>(key)].entity_id);
    }
    const PooledSet pooled = pool_agent_max(scores, y, groups);
    std::size_t pos = 0, apos = 0;
    for (auto v : y) pos += v;
    for (auto v : pooled.labels) apos += v;
    json m = {{"n_events", y.size()}, {"n_positive", pos}, {"n_agents", pooled.labels.size()},
              {"n_positive_agents", apos}};
    if (pos > 0 && pos < y.size()) {
      m["ap"] = average_precision(scores, y);
      m["auroc"] = auroc(scores, y);
      m["max_f1"] = max_f1(scores, y);
      m["sens_at_spec90"] = sens_at_spec(scores, y, 0.9);
    }
    if (apos > 0 && apos < pooled.labels.size()) {
      m["agent_ap"] = average_precision(pooled.scores, pooled.labels);
      m["agent_auroc"] = auroc(pooled.scores, pooled.labels);
    }
    report["metrics"] = m;
    report["head"] = sm.value("head", "");
  }
  if (o.out.empty()) std::cout << report.dump(2) << '\n';
  else write_json(o.out, report);
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  RunConfig cfg = resolve_config(o);
  GenConfig g = cfg.gen;
  g.n_entities = 20;
  g.n_contexts = 16;
  g.hotspot_count = 3;
  g.events_per_entity = 2 * cfg.model.T;
  const Generated gen = generate(g);
  const auto& ev = gen.corpus.events;
  std::vector<std::size_t> rows(ev.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const CoocIndex idx = CoocIndex::build(ev, rows, g.n_contexts, Partition::all);
  auto windows = chunk_windows(ev, rows, cfg.model.T);
  PerturbConfig pc = cfg.perturb;
  pc.p_norm = 0.0;
  Rng rng = derive_rng(cfg.seed, {1});
  std::vector<PerturbedWindow> pw;
  for (std::size_t b = 0; b < 2; ++b) pw.push_back(corrupt(windows[b * windows.size() / 2], gen.corpus.substrate, pc, rng));
  const Batch batch = assemble_batch(std::vector<const PerturbedWindow*>{&pw[0], &pw[1]}, cfg.model.C,
                                     {&idx, &ev, cfg.model.min_overlap});
  Model model(cfg.model, cfg.loss, g.n_entities, g.n_contexts, g.n_activities, cfg.seed);
  GradCheckOptions opt;
  opt.n_coords = o.coords;
  opt.seed = cfg.seed;
  const GradCheckReport rep = grad_check(
      model.params(), [&](ag::Tape& t) { return model.pretrain_loss(t, batch, gen.corpus.substrate).total; }, opt);
  std::cout << json{{"checked", rep.checked},
                    {"skipped", rep.skipped},
                    {"passed", rep.passed},
                    {"pass_rate", rep.pass_rate()},
                    {"max_rel_error", rep.max_rel_error}}
                   .dump(2)
            << '\n';
  return rep.pass_rate() >= 0.99 ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::tune_allocator();
  kernels::set_num_threads(0);
  CLI::App app{"Multi-entity event stream pre-training pipeline"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "key = value config file applied over the profile");
  app.add_option("--profile", o.profile, "desk | paper | name of profiles/<name>.cfg");
  app.add_option("--profile-dir", o.profile_dir, "directory holding <profile>.cfg files");
  app.add_option("--seed", o.seed, "run seed")->each([&](const std::string&) { o.seed_given = true; });
  app.add_option("--out", o.out, "output path");
  app.add_flag("--verbose,-v", "debug logging");

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus with planted anomalies");
  auto* index = app.add_subcommand("index", "build a co-occurrence index for one partition");
  index->add_option("--data", o.data, "corpus directory")->required();
  index->add_option("--partition", o.partition, "train | val | test | all");
  auto* pre = app.add_subcommand("pretrain", "self-supervised pre-training");
  pre->add_option("--data", o.data, "corpus directory")->required();
  pre->add_flag("--bypass-cooc", o.bypass_cooc, "skip the co-occurrence cross-attention");
  auto* ft = app.add_subcommand("finetune", "fine-tune a pre-trained checkpoint");
  ft->add_option("--checkpoint", o.checkpoint)->required();
  ft->add_option("--data", o.data)->required();
  ft->add_option("--task", o.task, "anomaly | next-visit");
  ft->add_option("--perturb", o.perturb, "structural | swap");
  ft->add_flag("--bypass-cooc", o.bypass_cooc);
  auto* score = app.add_subcommand("score", "score the test partition");
  score->add_option("--checkpoint", o.checkpoint)->required();
  score->add_option("--data", o.data)->required();
  score->add_option("--head", o.head, "noise | anomaly | prototype");
  score->add_option("--task", o.task, "anomaly | next-visit");
  score->add_flag("--fuse", o.fuse, "rank-fuse the head score with the prototype score");
  score->add_flag("--bypass-cooc", o.bypass_cooc);
  auto* eval = app.add_subcommand("evaluate", "metrics report for a scores file");
  eval->add_option("--scores", o.scores)->required();
  eval->add_option("--data", o.data)->required();
  auto* show = app.add_subcommand("config", "print the resolved configuration");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the joint loss");
  gc->add_option("--coords", o.coords, "sampled parameter coordinates");
  for (auto* sc : {gen, index, pre, ft, score, eval, show, gc}) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  spdlog::set_level(app.count("--verbose") ? spdlog::level::debug : spdlog::level::info);
  try {
    if (*gen) return cmd_generate(o);
    if (*index) return cmd_index(o);
    if (*pre) return cmd_pretrain(o);
    if (*ft) return cmd_finetune(o);
    if (*score) return cmd_score(o);
    if (*eval) return cmd_evaluate(o);
    if (*gc) return cmd_gradcheck(o);
    if (*show) {
      const RunConfig cfg = resolve_config(o);
      std::cout << "# profile " << cfg.profile << ", hash " << cfg.hash() << '\n' << dump_config(cfg);
      return kOk;
    }
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kUsage;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kNumerical;
  } catch (const DataError& e) {
    spdlog::error("data: {}", e.what());
    return kData;
  } catch (const FormatError& e) {
    spdlog::error("format: {}", e.what());
    return kData;
  } catch (const std::invalid_argument& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kData;
  }
  return kUsage;
}
