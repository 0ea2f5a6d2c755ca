#include "meses/inference.hpp"

#include <cmath>
#include <stdexcept>

namespace meses {

namespace {

void run_batch(const Model& model, const Batch& batch, const Substrate& substrate, EventOutputs& out) {
  ag::Tape tape(false);
  const ag::Var H = model.forward(tape, batch, substrate);
  const Tensor noise = model.noise_head().logits(tape, H).value();
  Tensor anom;
  if (model.anomaly_head()) anom = model.anomaly_head()->logits(tape, H).value();
  const Tensor z = model.projector().project(tape, H).value();           // unit rows (n, d_f)
  const Tensor P = ag::l2_normalize(model.encoder().prototypes(tape)).value();
  const std::size_t df = z.dim(1), U = P.dim(0);
  for (std::size_t i = 0; i < batch.valid.size(); ++i) {
    if (!batch.valid[i]) continue;
    out.rows.push_back(batch.rows[i]);
    out.entity.push_back(batch.entity[i]);
    out.label.push_back(batch.y[i] != 0.0);
    out.noise_logit.push_back(noise.data()[i]);
    if (model.anomaly_head()) out.anomaly_logit.push_back(anom.data()[i]);
    std::size_t best = 0;
    double best_cos = -INFINITY;
    for (std::size_t u = 0; u < U; ++u) {
      double c = 0;
      for (std::size_t k = 0; k < df; ++k) c += z.data()[i * df + k] * P.data()[u * df + k];
      if (c > best_cos) best_cos = c, best = u;
      if (u == batch.entity[i]) out.proto_cos.push_back(c);
    }
    out.nearest_entity.push_back(static_cast<std::uint32_t>(best));
  }
}

template <class W, class Ptr>
EventOutputs run_all(const Model& model, const std::vector<W>& windows, const PeerSource& peers,
                     const Substrate& substrate, std::size_t batch) {
  EventOutputs out;
  for (std::size_t s = 0; s < windows.size(); s += batch) {
    std::vector<Ptr> ptrs;
    for (std::size_t i = s; i < std::min(windows.size(), s + batch); ++i) ptrs.push_back(&windows[i]);
    run_batch(model, assemble_batch(ptrs, model.config().C, peers), substrate, out);
  }
  return out;
}

}  // namespace

EventOutputs run_windows(const Model& model, const std::vector<PerturbedWindow>& windows, const PeerSource& peers,
                         const Substrate& substrate, std::size_t batch) {
  return run_all<PerturbedWindow, const PerturbedWindow*>(model, windows, peers, substrate, batch);
}

EventOutputs run_windows(const Model& model, const std::vector<EventWindow>& windows, const PeerSource& peers,
                         const Substrate& substrate, std::size_t batch) {
  return run_all<EventWindow, const EventWindow*>(model, windows, peers, substrate, batch);
}

double entity_identification_accuracy(const EventOutputs& out) {
  if (out.size() == 0) throw std::invalid_argument("entity_identification_accuracy: no events");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < out.size(); ++i) hit += out.nearest_entity[i] == out.entity[i];
  return static_cast<double>(hit) / static_cast<double>(out.size());
}

NextVisitOutputs run_next_visit(const Model& model, const NextVisitQueries& queries, const PeerSource& peers,
                                const Substrate& substrate, std::size_t batch) {
  if (!model.poi_head() || !model.time_head()) throw std::invalid_argument("run_next_visit: model has no next-visit heads");
  NextVisitOutputs out;
  out.targets = queries.targets;
  out.deltas = queries.deltas;
  const std::size_t T = model.config().T;
  for (std::size_t s = 0; s < queries.windows.size(); s += batch) {
    const std::size_t e = std::min(queries.windows.size(), s + batch);
    std::vector<const EventWindow*> ptrs;
    std::vector<std::size_t> qrows, tgt;
    for (std::size_t i = s; i < e; ++i) {
      ptrs.push_back(&queries.windows[i]);
      qrows.push_back((i - s) * T + queries.windows[i].n_real() - 1);
      tgt.push_back(queries.targets[i]);
    }
    ag::Tape tape(false);
    const Batch b = assemble_batch(ptrs, model.config().C, peers);
    const ag::Var H = ag::gather_rows(model.forward(tape, b, substrate), qrows);
    const ag::Var q = model.poi_head()->query(tape, H);
    const Tensor sc = model.poi_head()->scores(tape, q).value();
    const Tensor raw =
        model.time_head()->raw(tape, q, model.poi_head()->embedding(tape, tgt)).value();
    const std::size_t X = sc.dim(1);
    for (std::size_t i = 0; i < e - s; ++i) {
      out.poi_scores.emplace_back(sc.data() + i * X, sc.data() + (i + 1) * X);
      out.mixtures.push_back(model.time_head()->mixture(raw, i));
    }
  }
  return out;
}

}  // namespace meses
