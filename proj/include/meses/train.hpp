#pragma once

// Optimizer, schedule, early stopping and the pre-training / fine-tuning loops.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "meses/config.hpp"
#include "meses/model.hpp"
#include "meses/schema.hpp"

namespace meses {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// eta_min + (peak - eta_min) (1 + cos(pi step / total)) / 2.
double cosine_lr(std::size_t step, std::size_t total, double peak, double eta_min);

struct StepReport {
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
  bool skipped = false;    // non-finite gradient
};

/// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  /// Clips the global gradient norm to `clip_norm` (0 disables), then
  /// updates. A non-finite gradient skips the update and leaves all state as is.
  StepReport step(double lr, double weight_decay, double clip_norm);
  std::size_t steps() const { return t_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
};

/// Global l2 norm of the gradients of `params`.
double global_grad_norm(const std::vector<Parameter*>& params);

/// Smoothed validation loss with patience counting. The first observation
/// seeds the average; training stops once the average has gone `patience`
/// epochs without improving on its best value.
class EmaEarlyStop {
 public:
  EmaEarlyStop(double factor, std::size_t patience) : factor_(factor), patience_(patience) {}
  /// Returns true when this epoch set a new best.
  bool update(double loss);
  bool should_stop() const { return seen_ > 0 && since_best_ >= patience_; }
  double ema() const { return ema_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based
  std::size_t since_best() const { return since_best_; }

 private:
  double factor_;
  std::size_t patience_;
  double ema_ = 0.0, best_ = 0.0;
  std::size_t seen_ = 0, since_best_ = 0, best_epoch_ = 0;
};

/// Events plus the split used by a run. Anomaly labels are never part of it.
struct TrainData {
  const std::vector<EventRecord>* events = nullptr;
  const Substrate* substrate = nullptr;
  CorpusSplit split;
};

TrainData make_train_data(const std::vector<EventRecord>& events, const Substrate& substrate,
                          const SplitConfig& split);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_noise = 0.0;
  double train_proto = 0.0;
  double val_loss = 0.0;
  double val_ema = 0.0;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  bool best = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;  // 0 = initialization kept
  bool stopped_early = false;
};

/// Called after every epoch, e.g. to append to a JSONL run log.
using EpochCallback = std::function<void(const EpochLog&)>;

/// Pre-trains encoder, backbone, noise head and projector on train_proper
/// windows with peers from a train index, validating on the val partition.
/// Restores the best-validation parameters before returning.
TrainResult pretrain(Model& model, const TrainData& data, const RunConfig& cfg, std::uint64_t seed,
                     const EpochCallback& on_epoch = {});

enum class PerturbKind { structural, swap };
PerturbKind parse_perturb_kind(const std::string& s);
const char* perturb_kind_name(PerturbKind k);

/// Fine-tunes encoder, backbone and the task head (added if absent) with the
/// learning rate scaled by finetune.lr_scale. The prototype loss is off.
TrainResult finetune(Model& model, const TrainData& data, const RunConfig& cfg, Task task, PerturbKind perturb,
                     std::uint64_t seed, const EpochCallback& on_epoch = {});

/// Next-visit query windows: for each chosen query event i of an entity the
/// window holds up to T events ending at i; the target is event i+1.
struct NextVisitQueries {
  std::vector<EventWindow> windows;
  std::vector<std::size_t> targets;   // next context
  std::vector<double> deltas;         // next start minus query start, hours
};
/// All queries over `rows` (every event with a successor in the same entity).
NextVisitQueries next_visit_queries(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows,
                                    std::size_t T);

// ---- checkpoints -----------------------------------------------------------

/// Manifest with the run configuration, its hash, the model's vocabulary
/// sizes and the registered task heads.
nlohmann::json model_manifest(const Model& model, const RunConfig& cfg, const std::string& stage,
                              std::uint64_t seed);
void save_model(const std::string& path, const Model& model, const nlohmann::json& manifest);

/// Rebuilds a model from a checkpoint; the run configuration is read back
/// from the manifest, `overrides` applied on top, and the result stored in `cfg`.
std::unique_ptr<Model> load_model(const std::string& path, RunConfig& cfg, nlohmann::json* manifest = nullptr,
                                  const ConfigMap& overrides = {});

}  // namespace meses
