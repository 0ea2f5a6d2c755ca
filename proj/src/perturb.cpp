#include "meses/perturb.hpp"

#include <algorithm>
#include <limits>

namespace meses {

namespace {

constexpr int kLocAttempts = 64;

// Location move that must change the context; nullopt if it cannot.
std::optional<EventRecord> move_location(const EventRecord& e, const Substrate& s, Rng& rng) {
  if (s.size() < 2) return std::nullopt;
  for (int k = 0; k < kLocAttempts; ++k) {
    EventRecord moved = perturb_location(e, s, rng);
    if (moved.context_id != e.context_id) return moved;
  }
  return std::nullopt;
}

}  // namespace

std::size_t PerturbedWindow::n_labels() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

std::uint32_t nearest_context(const Substrate& substrate, double x, double y) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& c : substrate.contexts) {
    const double dx = c.coords[0] - x, dy = c.coords[1] - y;
    const double d = dx * dx + dy * dy;
    if (d < best_d) {  // strict: the first (lowest) id keeps ties
      best_d = d;
      best = c.context_id;
    }
  }
  return best;
}

EventRecord perturb_location(const EventRecord& event, const Substrate& substrate, Rng& rng) {
  const double x = uniform(rng, substrate.aoi.lo[0], substrate.aoi.hi[0]);
  const double y = uniform(rng, substrate.aoi.lo[1], substrate.aoi.hi[1]);
  EventRecord out = event;
  out.context_id = nearest_context(substrate, x, y);
  out.activity = substrate.contexts[out.context_id].activity_label;
  return out;
}

std::optional<double> perturb_time(const EventWindow& original, std::size_t index, Rng& rng) {
  if (index == 0 || index >= original.length() || original.pad[index]) return std::nullopt;
  if (index + 1 >= original.length() || original.pad[index + 1]) return std::nullopt;
  const double lo = original.events[index - 1].t_end();
  const double hi = original.events[index + 1].t_start;
  if (!(hi > lo)) return std::nullopt;
  for (int k = 0; k < 16; ++k) {
    const double t = uniform(rng, lo, hi);
    if (t > lo && t < hi && t != original.events[index].t_start) return t;
  }
  return std::nullopt;
}

PerturbedWindow corrupt(const EventWindow& window, const Substrate& substrate, const PerturbConfig& cfg, Rng& rng) {
  const std::size_t T = window.length();
  PerturbedWindow out{window, std::vector<std::uint8_t>(T, 0), std::vector<std::uint8_t>(T, 0)};
  std::vector<std::size_t> real;
  for (std::size_t i = 0; i < T; ++i)
    if (!window.pad[i]) real.push_back(i);
  if (real.empty() || bernoulli(rng, cfg.p_norm)) return out;

  enum Mode { kLoc, kTime, kBoth };
  std::vector<Mode> modes;
  if (cfg.mode_loc) modes.push_back(kLoc);
  if (cfg.mode_time) modes.push_back(kTime);
  if (cfg.mode_both) modes.push_back(kBoth);
  if (modes.empty()) throw std::invalid_argument("perturbation needs at least one mode");

  for (int attempt = 0; attempt <= cfg.max_redraws; ++attempt) {
    out.window = window;
    std::fill(out.labels.begin(), out.labels.end(), 0);
    std::fill(out.flagged.begin(), out.flagged.end(), 0);
    bool any = false;
    for (auto i : real)
      if (bernoulli(rng, cfg.flag_rate)) out.flagged[i] = 1, any = true;
    if (!any) out.flagged[real[uniform_index(rng, real.size())]] = 1;

    for (auto i : real) {
      if (!out.flagged[i]) continue;
      const Mode m = modes[uniform_index(rng, modes.size())];
      EventRecord e = window.events[i];
      bool changed = false;
      if (m == kLoc || m == kBoth) {
        if (auto moved = move_location(e, substrate, rng)) {
          e = *moved;
          changed = true;
        }
      }
      if (m == kTime || m == kBoth) {
        if (auto t = perturb_time(window, i, rng)) {
          e.t_start = *t;
          changed = true;
        }
      }
      if (changed) {
        out.window.events[i] = e;
        out.labels[i] = 1;
      }
    }
    if (out.n_labels() > 0) return out;
  }

  // Every redraw reverted (e.g. time-only mode on a window without interior
  // events): move one event by location.
  out.window = window;
  std::fill(out.labels.begin(), out.labels.end(), 0);
  const std::size_t i = real[uniform_index(rng, real.size())];
  if (auto moved = move_location(window.events[i], substrate, rng)) {
    out.window.events[i] = *moved;
    out.labels[i] = 1;
  }
  return out;
}

DonorPool::DonorPool(const std::vector<EventRecord>& donors, std::size_t n_contexts) : by_context_(n_contexts) {
  for (const auto& e : donors) {
    by_context_.at(e.context_id).push_back(e);
    if (contexts_of_entity_.size() <= e.entity_id) contexts_of_entity_.resize(e.entity_id + 1);
    contexts_of_entity_[e.entity_id].push_back(e.context_id);
  }
  total_ = donors.size();
  for (auto& cs : contexts_of_entity_) {
    std::sort(cs.begin(), cs.end());
    cs.erase(std::unique(cs.begin(), cs.end()), cs.end());
  }
}

std::vector<std::uint8_t> DonorPool::entity_contexts(std::uint32_t u) const {
  std::vector<std::uint8_t> out(by_context_.size(), 0);
  if (u < contexts_of_entity_.size())
    for (auto c : contexts_of_entity_[u]) out[c] = 1;
  return out;
}

const EventRecord* DonorPool::draw(const std::vector<std::uint8_t>& excluded, Rng& rng) const {
  std::size_t eligible = 0;
  for (std::size_t c = 0; c < by_context_.size(); ++c)
    if (!excluded[c]) eligible += by_context_[c].size();
  if (eligible == 0) return nullptr;
  std::size_t k = uniform_index(rng, eligible);
  for (std::size_t c = 0; c < by_context_.size(); ++c) {
    if (excluded[c]) continue;
    if (k < by_context_[c].size()) return &by_context_[c][k];
    k -= by_context_[c].size();
  }
  return nullptr;
}

PerturbedWindow swap_corrupt(const EventWindow& window, const DonorPool& donors, double swap_prob, Rng& rng) {
  const std::size_t T = window.length();
  PerturbedWindow out{window, std::vector<std::uint8_t>(T, 0), std::vector<std::uint8_t>(T, 0)};
  auto excluded = donors.entity_contexts(window.entity_id);
  for (std::size_t i = 0; i < T; ++i)
    if (!window.pad[i] && window.events[i].context_id < excluded.size()) excluded[window.events[i].context_id] = 1;
  for (std::size_t i = 0; i < T; ++i) {
    if (window.pad[i] || !bernoulli(rng, swap_prob)) continue;
    out.flagged[i] = 1;
    const EventRecord* d = donors.draw(excluded, rng);
    if (!d) continue;
    out.window.events[i].context_id = d->context_id;
    out.window.events[i].activity = d->activity;
    out.labels[i] = 1;
  }
  return out;
}

}  // namespace meses
