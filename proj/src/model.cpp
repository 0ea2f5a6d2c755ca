#include "meses/model.hpp"

#include <spdlog/spdlog.h>

#include <stdexcept>

namespace meses {

namespace {

template <class GetWindow>
Batch assemble(std::size_t B, GetWindow get, std::size_t C, const PeerSource& src) {
  if (B == 0) throw std::invalid_argument("assemble_batch: empty batch");
  if (C == 0) throw std::invalid_argument("assemble_batch: C must be >= 1");
  const std::size_t T = get(0).first->length();
  Batch out;
  out.dims = {B, T, C, 0, 0};
  out.masks.peer_masked.assign(B * T * C, 1);
  out.masks.seq_pad.assign(B * T, 1);
  out.y.assign(B * T, 0.0);
  out.valid.assign(B * T, 0);
  out.entity.assign(B * T, 0);
  out.rows.assign(B * T, -1);
  for (std::size_t b = 0; b < B; ++b) {
    const auto [w, labels] = get(b);
    if (w->length() != T) throw ShapeError("assemble_batch: windows differ in length");
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t bt = b * T + t;
      out.entity[bt] = w->entity_id;
      if (w->pad[t]) continue;
      const EventRecord& e = w->events[t];
      out.masks.seq_pad[bt] = 0;
      out.valid[bt] = 1;
      out.rows[bt] = w->rows.empty() ? -1 : w->rows[t];
      if (labels) out.y[bt] = (*labels)[t];
      out.masks.peer_masked[bt * C] = 0;
      out.slot_events.push_back(e);
      out.slot_index.push_back(bt * C);
      if (C > 1 && src.index) {
        const PeerSet ps = retrieve_peers(*src.index, *src.events, e, C, src.min_overlap);
        for (std::size_t c = 1; c < C; ++c) {
          if (ps.mask[c]) continue;
          out.masks.peer_masked[bt * C + c] = 0;
          out.slot_events.push_back((*src.events)[static_cast<std::size_t>(ps.peers[c - 1])]);
          out.slot_index.push_back(bt * C + c);
        }
      }
    }
  }
  // Pad positions keep the focal slot unmasked; it simply carries zeros.
  for (std::size_t bt = 0; bt < B * T; ++bt) out.masks.peer_masked[bt * C] = 0;
  if (out.slot_events.empty()) throw std::invalid_argument("assemble_batch: batch has no real events");
  return out;
}

}  // namespace

Batch assemble_batch(const std::vector<const PerturbedWindow*>& windows, std::size_t C, const PeerSource& peers) {
  return assemble(
      windows.size(),
      [&](std::size_t b) { return std::pair{&windows[b]->window, &windows[b]->labels}; }, C, peers);
}

Batch assemble_batch(const std::vector<const EventWindow*>& windows, std::size_t C, const PeerSource& peers) {
  return assemble(
      windows.size(),
      [&](std::size_t b) { return std::pair{windows[b], static_cast<const std::vector<std::uint8_t>*>(nullptr)}; },
      C, peers);
}

const char* task_name(Task t) {
  switch (t) {
    case Task::none: return "none";
    case Task::anomaly: return "anomaly";
    case Task::poi: return "poi";
  }
  return "?";
}

Task parse_task(const std::string& s) {
  if (s == "anomaly") return Task::anomaly;
  if (s == "poi" || s == "next-visit") return Task::poi;
  if (s == "none") return Task::none;
  throw std::invalid_argument("unknown task: " + s);
}

Model::Model(const ModelConfig& cfg, const LossConfig& loss, std::size_t n_entities, std::size_t n_contexts,
             std::size_t n_activities, std::uint64_t seed)
    : cfg_(cfg), loss_(loss), n_entities_(n_entities), n_contexts_(n_contexts), n_activities_(n_activities) {
  cfg_.validate();
  if (!(loss.beta > 0) || loss.gamma < 0) throw std::invalid_argument("Model: need beta > 0 and gamma >= 0");
  Rng rng = derive_rng(seed, {0x6d6f64656cULL});
  enc_ = std::make_unique<FeatureEncoder>(cfg_, n_entities, n_activities, params_, rng);
  bb_ = std::make_unique<Backbone>(cfg_, params_, rng);
  noise_ = std::make_unique<NoiseHead>(cfg_.d, params_, rng);
  proj_ = std::make_unique<PrototypeProjector>(cfg_.d, cfg_.h_proj(), cfg_.d_f(), params_, rng);
}

void Model::add_task_head(Task task, std::size_t gmm_k, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {0x6865616dULL, static_cast<std::uint64_t>(task)});
  switch (task) {
    case Task::none: break;
    case Task::anomaly:
      if (!anom_) anom_ = std::make_unique<AnomalyHead>(cfg_.d, params_, rng);
      break;
    case Task::poi:
      if (!poi_) poi_ = std::make_unique<PoiHead>(cfg_.d, n_contexts_, params_, rng);
      if (!time_) time_ = std::make_unique<GmmTimeHead>(cfg_.d, gmm_k, params_, rng);
      break;
  }
}

ag::Var Model::forward(ag::Tape& tape, const Batch& batch, const Substrate& substrate) const {
  CliqueDims dims = batch.dims;
  dims.F = cfg_.F;
  dims.d_f = cfg_.d_f();
  if (dims.C != cfg_.C) throw ShapeError("Model::forward: batch clique size differs from config");
  const ag::Var z = enc_->embed(tape, batch.slot_events, substrate);
  const ag::Var x = ag::scatter_rows(z, batch.slot_index, dims.slots());
  return bb_->forward(tape, ag::reshape(x, {dims.slots() * dims.F, dims.d_f}), dims, batch.masks);
}

PretrainLoss Model::pretrain_loss(ag::Tape& tape, const Batch& batch, const Substrate& substrate) const {
  const ag::Var H = forward(tape, batch, substrate);
  PretrainLoss out;
  out.logits = noise_->logits(tape, H);
  out.noise = masked_bce(out.logits, batch.y, batch.valid);
  if (loss_.prototype_loss && loss_.gamma > 0) {
    std::vector<std::size_t> rows, ents;
    for (std::size_t i = 0; i < batch.valid.size(); ++i)
      if (batch.valid[i] && batch.y[i] == 0.0) {
        rows.push_back(i);
        ents.push_back(batch.entity[i]);
      }
    out.proto = prototype_loss(tape, H, enc_->prototypes(tape), *proj_, rows, ents, loss_.beta);
    if (!out.proto) spdlog::warn("batch has no unperturbed events; prototype term skipped");
  }
  out.total = joint_loss(out.noise, out.proto, loss_.gamma);
  return out;
}

}  // namespace meses
