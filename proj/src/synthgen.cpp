#include "meses/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace meses {

Generated generate(const GenConfig& cfg) {
  if (cfg.n_entities < 1 || cfg.n_contexts < 1 || cfg.n_activities < 1 || cfg.events_per_entity < 1)
    throw std::invalid_argument("generator counts must be >= 1");
  if (cfg.hotspot_count >= cfg.n_contexts && cfg.signature_size > 0)
    throw std::invalid_argument("hotspot_count leaves no contexts for home sets");
  const std::uint32_t n_home_pool = cfg.n_contexts - cfg.hotspot_count;
  if (cfg.signature_size < 1 || cfg.signature_size > n_home_pool)
    throw std::invalid_argument("signature_size must lie in [1, n_contexts - hotspot_count]");
  if (cfg.disjoint_home_sets && static_cast<std::uint64_t>(cfg.signature_size) * cfg.n_entities > n_home_pool)
    throw std::invalid_argument("not enough contexts for disjoint home sets");
  for (double r : {cfg.anomaly_rate, cfg.anomalous_entity_frac, cfg.hotspot_weight, cfg.point_event_rate})
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("generator rates must lie in [0,1]");

  Rng rng = derive_rng(cfg.seed, {0x67656eULL});
  Generated g;
  Substrate& s = g.corpus.substrate;
  s.origin_iso = "2024-01-01T00:00:00Z";
  s.n_activities = cfg.n_activities;
  for (std::uint32_t c = 0; c < cfg.n_contexts; ++c) {
    ContextRecord r;
    r.context_id = c;
    r.coords = {uniform01(rng), uniform01(rng)};
    r.activity_label = static_cast<std::uint32_t>(uniform_index(rng, cfg.n_activities));
    s.contexts.push_back(r);
  }
  s.update_aoi();

  // The last hotspot_count ids are hotspots; home sets come from the rest.
  for (std::uint32_t c = n_home_pool; c < cfg.n_contexts; ++c) g.truth.hotspots.push_back(c);
  std::vector<std::uint32_t> pool(n_home_pool);
  std::iota(pool.begin(), pool.end(), 0);
  if (cfg.disjoint_home_sets) std::shuffle(pool.begin(), pool.end(), rng);
  for (std::uint32_t u = 0; u < cfg.n_entities; ++u) {
    std::vector<std::uint32_t> home;
    if (cfg.disjoint_home_sets) {
      home.assign(pool.begin() + u * cfg.signature_size, pool.begin() + (u + 1) * cfg.signature_size);
    } else {
      // Partial Fisher-Yates without replacement.
      std::vector<std::uint32_t> p = pool;
      for (std::uint32_t k = 0; k < cfg.signature_size; ++k) {
        std::swap(p[k], p[k + uniform_index(rng, p.size() - k)]);
        home.push_back(p[k]);
      }
    }
    std::sort(home.begin(), home.end());
    g.truth.home_sets.push_back(std::move(home));
    g.truth.hours.push_back(uniform(rng, 0.0, 24.0));
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::uint32_t u = 0; u < cfg.n_entities; ++u) {
    const auto& home = g.truth.home_sets[u];
    for (std::uint32_t k = 0; k < cfg.events_per_entity; ++k) {
      EventRecord e;
      e.entity_id = u;
      const bool hot = !g.truth.hotspots.empty() && bernoulli(rng, cfg.hotspot_weight);
      e.context_id = hot ? g.truth.hotspots[uniform_index(rng, g.truth.hotspots.size())]
                         : home[uniform_index(rng, home.size())];
      e.activity = s.contexts[e.context_id].activity_label;
      double hour = std::fmod(g.truth.hours[u] + cfg.hour_profile_spread * gauss(rng), 24.0);
      if (hour < 0.0) hour += 24.0;
      e.t_start = 24.0 * k + hour;
      const double dur = std::min(std::exp(0.5 * gauss(rng)), 6.0);
      if (!bernoulli(rng, cfg.point_event_rate)) {
        e.duration = dur;
        e.has_duration = true;
      }
      g.corpus.events.push_back(e);
    }
  }
  normalize_events(g.corpus.events, s);
  return g;
}

Planted plant_inserted_visits(const std::vector<EventRecord>& events, const std::vector<std::size_t>& test_rows,
                              const Substrate& substrate, const GenTruth& truth, double rate,
                              double anomalous_entity_frac, double hour_spread, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("rate must lie in [0,1]");
  if (!(anomalous_entity_frac > 0.0 && anomalous_entity_frac <= 1.0))
    throw std::invalid_argument("anomalous_entity_frac must lie in (0,1]");
  Planted out{events, std::vector<std::uint8_t>(events.size(), 0)};
  const std::size_t n_insert = static_cast<std::size_t>(std::llround(rate * static_cast<double>(test_rows.size())));
  if (n_insert == 0) return out;

  std::set<std::uint32_t> entities;
  for (auto r : test_rows) entities.insert(events[r].entity_id);
  std::vector<std::uint32_t> ents(entities.begin(), entities.end());
  std::shuffle(ents.begin(), ents.end(), rng);
  const auto n_anom = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(anomalous_entity_frac * static_cast<double>(ents.size()))));
  const std::set<std::uint32_t> chosen(ents.begin(), ents.begin() + static_cast<std::ptrdiff_t>(std::min(n_anom, ents.size())));

  std::vector<std::size_t> candidates;
  for (auto r : test_rows)
    if (chosen.count(events[r].entity_id)) candidates.push_back(r);
  if (candidates.size() < n_insert)
    throw std::invalid_argument("anomaly rate exceeds the test events of the anomalous entities");
  for (std::size_t k = 0; k < n_insert; ++k)
    std::swap(candidates[k], candidates[k + uniform_index(rng, candidates.size() - k)]);
  candidates.resize(n_insert);
  std::sort(candidates.begin(), candidates.end());

  const double gap = std::min(std::max(3.0 * hour_spread, 3.0), 11.0);
  for (auto r : candidates) {
    EventRecord& e = out.events[r];
    const auto& home = truth.home_sets.at(e.entity_id);
    std::vector<std::uint32_t> outside;
    for (std::uint32_t c = 0; c < substrate.size(); ++c)
      if (!std::binary_search(home.begin(), home.end(), c) &&
          std::find(truth.hotspots.begin(), truth.hotspots.end(), c) == truth.hotspots.end())
        outside.push_back(c);
    if (outside.empty()) throw std::invalid_argument("no context outside the home set to insert");
    e.context_id = outside[uniform_index(rng, outside.size())];
    e.activity = substrate.contexts[e.context_id].activity_label;
    const double day = std::floor(e.t_start / 24.0);
    double hour = std::fmod(truth.hours.at(e.entity_id) + uniform(rng, gap, 24.0 - gap), 24.0);
    e.t_start = 24.0 * day + hour;
    out.labels[r] = 1;
  }
  return out;
}

}  // namespace meses
