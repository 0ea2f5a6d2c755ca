#pragma once

// Forward-only passes over windows: per-event head scores, nearest-prototype
// entity identification and next-visit ranking.

#include <vector>

#include "meses/eval.hpp"
#include "meses/model.hpp"
#include "meses/train.hpp"

namespace meses {

/// One row per real event of the scored windows, in window order.
struct EventOutputs {
  std::vector<std::int64_t> rows;       // global row, -1 if unknown
  std::vector<std::uint32_t> entity;
  std::vector<std::uint8_t> label;      // perturbation label (0 for clean windows)
  std::vector<double> noise_logit;
  std::vector<double> anomaly_logit;    // empty without an anomaly head
  std::vector<double> proto_cos;        // cosine to the entity's own prototype
  std::vector<std::uint32_t> nearest_entity;  // argmax cosine over all prototypes

  std::size_t size() const { return rows.size(); }
};

EventOutputs run_windows(const Model& model, const std::vector<PerturbedWindow>& windows, const PeerSource& peers,
                         const Substrate& substrate, std::size_t batch = 256);
EventOutputs run_windows(const Model& model, const std::vector<EventWindow>& windows, const PeerSource& peers,
                         const Substrate& substrate, std::size_t batch = 256);

/// Fraction of events whose nearest prototype is their own entity's.
double entity_identification_accuracy(const EventOutputs& out);

struct NextVisitOutputs {
  std::vector<std::vector<double>> poi_scores;  // per query, every context
  std::vector<Mixture> mixtures;                // conditioned on the true next context
  std::vector<std::size_t> targets;
  std::vector<double> deltas;
};

NextVisitOutputs run_next_visit(const Model& model, const NextVisitQueries& queries, const PeerSource& peers,
                                const Substrate& substrate, std::size_t batch = 256);

}  // namespace meses
