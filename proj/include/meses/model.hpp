#pragma once

// The pre-training model (encoder, backbone, noise head, projector) with
// optional fine-tune heads, and assembly of windows into clique batches.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "meses/backbone.hpp"
#include "meses/cooc.hpp"
#include "meses/featencode.hpp"
#include "meses/objectives.hpp"
#include "meses/perturb.hpp"

namespace meses {

/// One batch of B windows with their retrieved peers.
struct Batch {
  CliqueDims dims;
  CliqueMasks masks;
  std::vector<EventRecord> slot_events;   // real (non-masked) slots in (b,t,c) order
  std::vector<std::size_t> slot_index;    // their flat (b,t,c) positions
  std::vector<double> y;                  // B*T labels, 0 on pads
  std::vector<std::uint8_t> valid;        // B*T, 1 = real event
  std::vector<std::uint32_t> entity;      // B*T window entity
  std::vector<std::int64_t> rows;         // B*T global row of the focal event, -1 on pads
};

/// Peer source for batch assembly; a null index gives no peers.
struct PeerSource {
  const CoocIndex* index = nullptr;
  const std::vector<EventRecord>* events = nullptr;
  double min_overlap = 0.0;
};

/// Builds a batch. Peers are retrieved for the event as it appears in the
/// window, so a corrupted event gets the peers of its corrupted context.
Batch assemble_batch(const std::vector<const PerturbedWindow*>& windows, std::size_t C, const PeerSource& peers);

/// Labels-free variant for scoring clean windows.
Batch assemble_batch(const std::vector<const EventWindow*>& windows, std::size_t C, const PeerSource& peers);

enum class Task { none, anomaly, poi };
const char* task_name(Task t);
Task parse_task(const std::string& s);

struct PretrainLoss {
  ag::Var total;
  ag::Var noise;
  std::optional<ag::Var> proto;
  ag::Var logits;
};

class Model {
 public:
  Model(const ModelConfig& cfg, const LossConfig& loss, std::size_t n_entities, std::size_t n_contexts,
        std::size_t n_activities, std::uint64_t seed);

  /// Registers the fine-tune head for `task` ("ft.*" parameters).
  void add_task_head(Task task, std::size_t gmm_k, std::uint64_t seed);

  /// H (B*T, d) for a batch.
  ag::Var forward(ag::Tape& tape, const Batch& batch, const Substrate& substrate) const;

  PretrainLoss pretrain_loss(ag::Tape& tape, const Batch& batch, const Substrate& substrate) const;

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const LossConfig& loss_config() const { return loss_; }
  const FeatureEncoder& encoder() const { return *enc_; }
  const Backbone& backbone() const { return *bb_; }
  const NoiseHead& noise_head() const { return *noise_; }
  const PrototypeProjector& projector() const { return *proj_; }
  const AnomalyHead* anomaly_head() const { return anom_.get(); }
  const PoiHead* poi_head() const { return poi_.get(); }
  const GmmTimeHead* time_head() const { return time_.get(); }
  std::size_t n_entities() const { return n_entities_; }
  std::size_t n_contexts() const { return n_contexts_; }
  std::size_t n_activities() const { return n_activities_; }

 private:
  ModelConfig cfg_;
  LossConfig loss_;
  std::size_t n_entities_, n_contexts_, n_activities_;
  ParamRegistry params_;
  std::unique_ptr<FeatureEncoder> enc_;
  std::unique_ptr<Backbone> bb_;
  std::unique_ptr<NoiseHead> noise_;
  std::unique_ptr<PrototypeProjector> proj_;
  std::unique_ptr<AnomalyHead> anom_;
  std::unique_ptr<PoiHead> poi_;
  std::unique_ptr<GmmTimeHead> time_;
};

}  // namespace meses
