#include "meses/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "meses/checkpoint.hpp"

namespace meses {

double cosine_lr(std::size_t step, std::size_t total, double peak, double eta_min) {
  if (step > total) throw std::out_of_range("cosine_lr: step beyond schedule");
  if (total == 0) return peak;
  if (step == total) return eta_min;
  const double c = std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total));
  return eta_min + (peak - eta_min) * (1.0 + c) / 2.0;
}

double global_grad_norm(const std::vector<Parameter*>& params) {
  double s = 0.0;
  for (const auto* p : params)
    for (double g : p->grad.storage()) s += g * g;
  return std::sqrt(s);
}

AdamW::AdamW(std::vector<Parameter*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {}

StepReport AdamW::step(double lr, double weight_decay, double clip_norm) {
  StepReport r;
  r.grad_norm = global_grad_norm(params_);
  if (!std::isfinite(r.grad_norm)) {
    r.skipped = true;
    return r;
  }
  double gscale = 1.0;
  if (clip_norm > 0 && r.grad_norm > clip_norm) {
    gscale = clip_norm / r.grad_norm;
    r.clipped = true;
    for (auto* p : params_)
      for (double& g : p->grad.storage()) g *= gscale;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto* p : params_) {
    double* w = p->value.data();
    const double* g = p->grad.data();
    double* m = p->m.data();
    double* v = p->v.data();
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      m[i] = b1_ * m[i] + (1 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1 - b2_) * g[i] * g[i];
      w[i] -= lr * weight_decay * w[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
  return r;
}

bool EmaEarlyStop::update(double loss) {
  ema_ = seen_ == 0 ? loss : factor_ * loss + (1 - factor_) * ema_;
  ++seen_;
  if (seen_ == 1 || ema_ < best_) {
    best_ = ema_;
    best_epoch_ = seen_;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

TrainData make_train_data(const std::vector<EventRecord>& events, const Substrate& substrate,
                          const SplitConfig& split) {
  return {&events, &substrate, temporal_split(events, split.train_frac, split.val_frac_of_train)};
}

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch},       {"lr", lr},           {"train_loss", train_loss},
          {"train_noise", train_noise}, {"train_proto", train_proto}, {"val_loss", val_loss},
          {"val_ema", val_ema},   {"steps", steps},     {"skipped_steps", skipped_steps},
          {"best", best}};
}

PerturbKind parse_perturb_kind(const std::string& s) {
  if (s == "structural") return PerturbKind::structural;
  if (s == "swap") return PerturbKind::swap;
  throw std::invalid_argument("unknown perturbation: " + s);
}

const char* perturb_kind_name(PerturbKind k) { return k == PerturbKind::swap ? "swap" : "structural"; }

NextVisitQueries next_visit_queries(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows,
                                    std::size_t T) {
  NextVisitQueries q;
  std::vector<std::size_t> sorted(rows);
  std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) {
    if (events[a].entity_id != events[b].entity_id) return events[a].entity_id < events[b].entity_id;
    return events[a].t_start < events[b].t_start;
  });
  std::size_t begin = 0;
  while (begin < sorted.size()) {
    std::size_t end = begin;
    while (end < sorted.size() && events[sorted[end]].entity_id == events[sorted[begin]].entity_id) ++end;
    for (std::size_t i = begin; i + 1 < end; ++i) {
      const std::size_t first = i + 1 >= begin + T ? i + 1 - T : begin;
      EventWindow w;
      w.entity_id = events[sorted[i]].entity_id;
      w.events.assign(T, EventRecord{});
      w.pad.assign(T, 1);
      w.rows.assign(T, -1);
      for (std::size_t j = first; j <= i; ++j) {
        w.events[j - first] = events[sorted[j]];
        w.pad[j - first] = 0;
        w.rows[j - first] = static_cast<std::int64_t>(sorted[j]);
      }
      q.windows.push_back(std::move(w));
      q.targets.push_back(events[sorted[i + 1]].context_id);
      q.deltas.push_back(events[sorted[i + 1]].t_start - events[sorted[i]].t_start);
    }
    begin = end;
  }
  return q;
}

namespace {

/// One prepared optimization batch.
struct Prepared {
  std::vector<PerturbedWindow> windows;
  Batch batch;
  std::vector<std::size_t> query_rows;  // next-visit: row of H per window
  std::vector<std::size_t> targets;
  std::vector<double> deltas;
};

struct LossParts {
  ag::Var total;
  double noise = 0.0, proto = 0.0;
};

using PrepareFn = std::function<Prepared(std::size_t epoch, const std::vector<std::size_t>& idx)>;
using LossFn = std::function<LossParts(ag::Tape&, const Prepared&, Rng&)>;

struct LoopSpec {
  std::size_t n_train = 0;  // training units per epoch
  std::size_t batch = 64;
  std::size_t max_epochs = 0;
  std::size_t patience = 0;
  double peak_lr = 0, eta_min = 0, weight_decay = 0, clip = 0, ema_factor = 0.1;
  bool strict = true;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // separates pretrain and fine-tune rng streams
};

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order, std::size_t batch) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch)));
  return out;
}

bool all_finite(const std::vector<Parameter*>& ps) {
  for (const Parameter* p : ps)
    for (double v : p->value.values())
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<Tensor> snapshot(const std::vector<Parameter*>& ps) {
  std::vector<Tensor> s;
  s.reserve(ps.size());
  for (auto* p : ps) s.push_back(p->value);
  return s;
}

void restore(const std::vector<Parameter*>& ps, const std::vector<Tensor>& s) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = s[i];
}

TrainResult run_loop(Model& model, const std::vector<Parameter*>& trainable, const LoopSpec& spec,
                     const PrepareFn& prepare, const LossFn& loss_fn, const std::vector<Prepared>& val,
                     const EpochCallback& on_epoch) {
  TrainResult result;
  if (spec.max_epochs == 0 || spec.n_train == 0) return result;
  for (auto* p : trainable) {
    p->m.fill(0.0);
    p->v.fill(0.0);
  }
  AdamW opt(trainable);
  const std::size_t steps_per_epoch = (spec.n_train + spec.batch - 1) / spec.batch;
  const std::size_t total_steps = spec.max_epochs * steps_per_epoch;
  EmaEarlyStop stopper(spec.ema_factor, spec.patience);
  std::vector<Tensor> best = snapshot(trainable);
  std::size_t step = 0;

  auto val_loss = [&]() {
    double s = 0, w = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
      ag::Tape tape(false);
      Rng rng = derive_rng(spec.seed, {spec.stream, 0x76616cULL, i});
      const double n = static_cast<double>(val[i].windows.size());
      s += n * loss_fn(tape, val[i], rng).total.item();
      w += n;
    }
    return w > 0 ? s / w : 0.0;
  };

  for (std::size_t epoch = 1; epoch <= spec.max_epochs; ++epoch) {
    std::vector<std::size_t> order(spec.n_train);
    std::iota(order.begin(), order.end(), 0);
    Rng shuf = derive_rng(spec.seed, {spec.stream, 0x73687566ULL, epoch});
    std::shuffle(order.begin(), order.end(), shuf);
    const auto batches = chunk(order, spec.batch);

    EpochLog log;
    log.epoch = epoch;
    log.lr = cosine_lr(step, total_steps, spec.peak_lr, spec.eta_min);
    double weight = 0;
    std::future<Prepared> next;
    if (!spec.strict) next = std::async(std::launch::async, prepare, epoch, batches[0]);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      Prepared cur = spec.strict ? prepare(epoch, batches[bi]) : next.get();
      if (!spec.strict && bi + 1 < batches.size())
        next = std::async(std::launch::async, prepare, epoch, batches[bi + 1]);
      model.params().zero_grad();
      ag::Tape tape;
      Rng rng = derive_rng(spec.seed, {spec.stream, 0x6c6f7373ULL, epoch, bi});
      const LossParts lp = loss_fn(tape, cur, rng);
      const double lv = lp.total.item();
      if (!std::isfinite(lv)) throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch));
      tape.backward(lp.total);
      const double lr = cosine_lr(step, total_steps, spec.peak_lr, spec.eta_min);
      const StepReport rep = opt.step(lr, spec.weight_decay, spec.clip);
      if (rep.skipped) {
        ++log.skipped_steps;
        spdlog::warn("epoch {} batch {}: non-finite gradient, step skipped", epoch, bi);
      } else if (!all_finite(trainable)) {
        throw NumericalError("parameters diverged at epoch " + std::to_string(epoch));
      }
      ++step;
      ++log.steps;
      const double n = static_cast<double>(cur.windows.size());
      log.train_loss += n * lv;
      log.train_noise += n * lp.noise;
      log.train_proto += n * lp.proto;
      weight += n;
    }
    log.train_loss /= weight;
    log.train_noise /= weight;
    log.train_proto /= weight;
    // Without a validation set the training loss drives early stopping.
    log.val_loss = val.empty() ? log.train_loss : val_loss();
    if (!std::isfinite(log.val_loss)) throw NumericalError("non-finite validation loss");
    log.best = stopper.update(log.val_loss);
    log.val_ema = stopper.ema();
    if (log.best) {
      best = snapshot(trainable);
      result.best_epoch = epoch;
    }
    spdlog::info("epoch {} train {:.5f} val {:.5f} ema {:.5f}{}", epoch, log.train_loss, log.val_loss, log.val_ema,
                 log.best ? " *" : "");
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    if (stopper.should_stop()) {
      result.stopped_early = epoch < spec.max_epochs;
      break;
    }
  }
  restore(trainable, best);
  return result;
}

std::vector<Parameter*> params_matching(ParamRegistry& reg, const std::vector<std::string>& prefixes) {
  std::vector<Parameter*> out;
  for (auto* p : reg.all())
    for (const auto& pre : prefixes)
      if (p->name.rfind(pre, 0) == 0) {
        out.push_back(p);
        break;
      }
  return out;
}

/// Shared data preparation: windows over a partition, corrupted by a
/// callback and joined with peers from that partition's index.
struct Partitioned {
  std::vector<EventWindow> windows;
  CoocIndex index;
};

Partitioned partition(const TrainData& data, const std::vector<std::size_t>& rows, std::size_t T, Partition tag) {
  Partitioned p;
  p.windows = chunk_windows(*data.events, rows, T);
  p.index = CoocIndex::build(*data.events, rows, data.substrate->size(), tag);
  return p;
}

Prepared prepare_corrupted(const std::vector<EventWindow>& windows, const std::vector<std::size_t>& idx,
                           const std::function<PerturbedWindow(const EventWindow&, Rng&)>& corrupt_fn,
                           std::uint64_t seed, std::initializer_list<std::uint64_t> stream, const PeerSource& src,
                           std::size_t C) {
  Prepared p;
  p.windows.reserve(idx.size());
  for (std::size_t i : idx) {
    std::vector<std::uint64_t> coords(stream);
    coords.push_back(i);
    Rng rng = derive_rng(seed, coords);
    p.windows.push_back(corrupt_fn(windows[i], rng));
  }
  std::vector<const PerturbedWindow*> ptrs;
  for (const auto& w : p.windows) ptrs.push_back(&w);
  p.batch = assemble_batch(ptrs, C, src);
  return p;
}

LoopSpec base_spec(const RunConfig& cfg, std::uint64_t seed) {
  LoopSpec s;
  s.batch = cfg.train.batch;
  s.eta_min = cfg.train.optim.eta_min;
  s.weight_decay = cfg.train.optim.weight_decay;
  s.clip = cfg.train.optim.clip_norm;
  s.ema_factor = cfg.train.ema_factor;
  s.strict = cfg.train.strict;
  s.seed = seed;
  return s;
}

std::vector<Prepared> prepare_val(std::size_t n, std::size_t batch,
                                  const std::function<Prepared(const std::vector<std::size_t>&)>& make) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  std::vector<Prepared> out;
  for (const auto& idx : chunk(all, batch)) out.push_back(make(idx));
  return out;
}

}  // namespace

TrainResult pretrain(Model& model, const TrainData& data, const RunConfig& cfg, std::uint64_t seed,
                     const EpochCallback& on_epoch) {
  const ModelConfig& mc = model.config();
  const Partitioned train = partition(data, data.split.train_proper, mc.T, Partition::train);
  const Partitioned val = partition(data, data.split.val, mc.T, Partition::val);
  const PeerSource train_src{&train.index, data.events, mc.min_overlap};
  const PeerSource val_src{&val.index, data.events, mc.min_overlap};
  const Substrate& sub = *data.substrate;
  const PerturbConfig pc = cfg.perturb;
  auto eta = [&](const EventWindow& w, Rng& rng) { return corrupt(w, sub, pc, rng); };

  const PrepareFn prepare = [&](std::size_t epoch, const std::vector<std::size_t>& idx) {
    return prepare_corrupted(train.windows, idx, eta, seed, {1, epoch}, train_src, mc.C);
  };
  const LossFn loss = [&](ag::Tape& tape, const Prepared& p, Rng&) {
    const PretrainLoss l = model.pretrain_loss(tape, p.batch, sub);
    return LossParts{l.total, l.noise.item(), l.proto ? l.proto->item() : 0.0};
  };
  const auto val_batches = prepare_val(val.windows.size(), cfg.train.val_batch, [&](const auto& idx) {
    return prepare_corrupted(val.windows, idx, eta, cfg.train.val_seed, {2}, val_src, mc.C);
  });

  LoopSpec spec = base_spec(cfg, seed);
  spec.n_train = train.windows.size();
  spec.max_epochs = cfg.train.max_epochs;
  spec.patience = cfg.train.patience;
  spec.peak_lr = cfg.train.optim.peak_lr;
  spec.stream = 0x707265ULL;
  auto trainable = params_matching(model.params(), {"enc.", "bb.", "head."});
  return run_loop(model, trainable, spec, prepare, loss, val_batches, on_epoch);
}

TrainResult finetune(Model& model, const TrainData& data, const RunConfig& cfg, Task task, PerturbKind perturb,
                     std::uint64_t seed, const EpochCallback& on_epoch) {
  if (task == Task::none) throw std::invalid_argument("finetune: no task given");
  model.add_task_head(task, cfg.finetune.gmm_k, seed);
  const ModelConfig& mc = model.config();
  const Substrate& sub = *data.substrate;
  LoopSpec spec = base_spec(cfg, seed);
  spec.max_epochs = cfg.finetune.max_epochs;
  spec.patience = cfg.finetune.patience;
  spec.peak_lr = cfg.finetune.lr_scale * cfg.train.optim.peak_lr;
  spec.stream = 0x6674ULL + static_cast<std::uint64_t>(task);
  auto trainable = params_matching(model.params(), {"enc.", "bb.", task == Task::anomaly ? "ft.anom." : "ft.poi."});
  if (task == Task::poi) {
    auto t = params_matching(model.params(), {"ft.time."});
    trainable.insert(trainable.end(), t.begin(), t.end());
  }

  if (task == Task::anomaly) {
    const Partitioned train = partition(data, data.split.train_proper, mc.T, Partition::train);
    const Partitioned val = partition(data, data.split.val, mc.T, Partition::val);
    const PeerSource train_src{&train.index, data.events, mc.min_overlap};
    const PeerSource val_src{&val.index, data.events, mc.min_overlap};
    const DonorPool donors(select_rows(*data.events, data.split.train), sub.size());
    const PerturbConfig pc = cfg.perturb;
    const double swap_p = cfg.finetune.swap_prob;
    auto eta = [&](const EventWindow& w, Rng& rng) {
      return perturb == PerturbKind::swap ? swap_corrupt(w, donors, swap_p, rng) : corrupt(w, sub, pc, rng);
    };
    const PrepareFn prepare = [&](std::size_t epoch, const std::vector<std::size_t>& idx) {
      return prepare_corrupted(train.windows, idx, eta, seed, {3, epoch}, train_src, mc.C);
    };
    const LossFn loss = [&](ag::Tape& tape, const Prepared& p, Rng&) {
      const ag::Var H = model.forward(tape, p.batch, sub);
      const ag::Var l = masked_bce(model.anomaly_head()->logits(tape, H), p.batch.y, p.batch.valid);
      return LossParts{l, l.item(), 0.0};
    };
    const auto val_batches = prepare_val(val.windows.size(), cfg.train.val_batch, [&](const auto& idx) {
      return prepare_corrupted(val.windows, idx, eta, cfg.train.val_seed, {4}, val_src, mc.C);
    });
    spec.n_train = train.windows.size();
    return run_loop(model, trainable, spec, prepare, loss, val_batches, on_epoch);
  }

  // Next visit: windows end at the query event; the query reads the last real position.
  const auto train_q = next_visit_queries(*data.events, data.split.train_proper, mc.T);
  const auto val_q = next_visit_queries(*data.events, data.split.val, mc.T);
  const CoocIndex train_index =
      CoocIndex::build(*data.events, data.split.train_proper, sub.size(), Partition::train);
  const CoocIndex val_index = CoocIndex::build(*data.events, data.split.val, sub.size(), Partition::val);
  auto make = [&](const NextVisitQueries& q, const CoocIndex& index, const std::vector<std::size_t>& idx) {
    Prepared p;
    for (std::size_t i : idx) {
      PerturbedWindow w;
      w.window = q.windows[i];
      w.labels.assign(mc.T, 0);
      w.flagged.assign(mc.T, 0);
      p.windows.push_back(std::move(w));
      p.targets.push_back(q.targets[i]);
      p.deltas.push_back(q.deltas[i]);
    }
    std::vector<const PerturbedWindow*> ptrs;
    for (const auto& w : p.windows) ptrs.push_back(&w);
    p.batch = assemble_batch(ptrs, mc.C, {&index, data.events, mc.min_overlap});
    for (std::size_t b = 0; b < p.windows.size(); ++b)
      p.query_rows.push_back(b * mc.T + p.windows[b].window.n_real() - 1);
    return p;
  };
  const PrepareFn prepare = [&](std::size_t, const std::vector<std::size_t>& idx) {
    return make(train_q, train_index, idx);
  };
  const std::size_t n_neg = cfg.finetune.n_neg;
  const double temp = cfg.finetune.poi_temperature;
  const LossFn loss = [&](ag::Tape& tape, const Prepared& p, Rng& rng) {
    const ag::Var H = ag::gather_rows(model.forward(tape, p.batch, sub), p.query_rows);
    const PoiHead& poi = *model.poi_head();
    const ag::Var q = poi.query(tape, H);
    const ag::Var lp = poi.loss(tape, q, p.targets, n_neg, temp, rng);
    const GmmTimeHead& th = *model.time_head();
    const ag::Var lt = th.nll(th.raw(tape, q, poi.embedding(tape, p.targets)), p.deltas);
    return LossParts{ag::add(lp, lt), lp.item(), lt.item()};
  };
  const auto val_batches = prepare_val(val_q.windows.size(), cfg.train.val_batch,
                                       [&](const auto& idx) { return make(val_q, val_index, idx); });
  spec.n_train = train_q.windows.size();
  return run_loop(model, trainable, spec, prepare, loss, val_batches, on_epoch);
}

nlohmann::json model_manifest(const Model& model, const RunConfig& cfg, const std::string& stage,
                              std::uint64_t seed) {
  nlohmann::json tasks = nlohmann::json::array();
  if (model.anomaly_head()) tasks.push_back("anomaly");
  if (model.poi_head()) tasks.push_back("poi");
  return {{"format", "meses-checkpoint"},
          {"stage", stage},
          {"seed", seed},
          {"config", cfg.to_json()},
          {"config_hash", cfg.hash()},
          {"n_entities", model.n_entities()},
          {"n_contexts", model.n_contexts()},
          {"n_activities", model.n_activities()},
          {"tasks", tasks}};
}

void save_model(const std::string& path, const Model& model, const nlohmann::json& manifest) {
  save_checkpoint(path, model.params(), manifest);
}

std::unique_ptr<Model> load_model(const std::string& path, RunConfig& cfg, nlohmann::json* manifest,
                                  const ConfigMap& overrides) {
  const nlohmann::json m = read_checkpoint_manifest(path);
  try {
    ConfigMap map;
    for (const auto& [k, v] : m.at("config").items()) map[k] = v.get<std::string>();
    for (const auto& [k, v] : overrides) map[k] = v;
    RunConfig rc;
    apply_config(rc, map);
    auto model = std::make_unique<Model>(rc.model, rc.loss, m.at("n_entities").get<std::size_t>(),
                                         m.at("n_contexts").get<std::size_t>(),
                                         m.at("n_activities").get<std::size_t>(), m.at("seed").get<std::uint64_t>());
    for (const auto& t : m.at("tasks")) model->add_task_head(parse_task(t.get<std::string>()), rc.finetune.gmm_k, 0);
    ParamRegistry& reg = model->params();
    load_checkpoint(path, reg, false);
    cfg = rc;
    if (manifest) *manifest = m;
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": bad checkpoint manifest: " + e.what());
  }
}

}  // namespace meses
