#pragma once

// Synthetic corpora with planted entity signatures, shared hotspots and
// inserted-visit anomalies.

#include <cstdint>
#include <vector>

#include "meses/rng.hpp"
#include "meses/schema.hpp"

namespace meses {

struct GenConfig {
  std::uint32_t n_entities = 50;
  std::uint32_t n_contexts = 40;
  std::uint32_t n_activities = 8;
  std::uint32_t signature_size = 4;  // home-set size
  std::uint32_t events_per_entity = 400;
  std::uint32_t hotspot_count = 5;
  double hour_profile_spread = 1.5;  // std of visit hour around the entity's hour
  double anomaly_rate = 0.05;        // fraction of test events replaced
  double anomalous_entity_frac = 0.2;
  double hotspot_weight = 0.2;       // mixture weight of the shared hotspots
  double point_event_rate = 0.1;     // fraction of events without a duration
  bool disjoint_home_sets = false;
  std::uint64_t seed = 7;
};

/// What the generator planted, for tests that need ground truth.
struct GenTruth {
  std::vector<std::vector<std::uint32_t>> home_sets;  // per entity, sorted
  std::vector<double> hours;                          // characteristic hour per entity
  std::vector<std::uint32_t> hotspots;
};

struct Generated {
  Corpus corpus;
  GenTruth truth;
};

/// Entity u's k-th event falls on day k at hour N(h_u, spread) mod 24, at a
/// context drawn from its home set, or from the hotspots with probability
/// hotspot_weight. Durations are log-normal (median 1 h).
Generated generate(const GenConfig& cfg);

/// Replaces round(rate * |test_rows|) test events, drawn from the test events
/// of a random `anomalous_entity_frac` share of entities, by inserted visits:
/// a context outside the entity's home set and the hotspots, and an hour at
/// least max(3*spread, 3) h away from its characteristic hour on the same
/// day. Returns the modified events and a label per event (1 = inserted).
struct Planted {
  std::vector<EventRecord> events;
  std::vector<std::uint8_t> labels;
};
Planted plant_inserted_visits(const std::vector<EventRecord>& events, const std::vector<std::size_t>& test_rows,
                              const Substrate& substrate, const GenTruth& truth, double rate,
                              double anomalous_entity_frac, double hour_spread, Rng& rng);

}  // namespace meses
