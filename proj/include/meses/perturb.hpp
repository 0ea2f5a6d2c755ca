#pragma once

// The corruption operator behind the noise-detection objective, plus the
// context-swap variant used for lateral-movement style fine-tuning.

#include <cstdint>
#include <optional>
#include <vector>

#include "meses/rng.hpp"
#include "meses/schema.hpp"

namespace meses {

struct PerturbConfig {
  double p_norm = 0.7;     // probability a window is left untouched
  double flag_rate = 0.3;  // per-event flag probability
  bool mode_loc = true;
  bool mode_time = true;
  bool mode_both = true;
  int max_redraws = 8;
};

struct PerturbedWindow {
  EventWindow window;
  std::vector<std::uint8_t> labels;   // 1 = event differs from the original
  std::vector<std::uint8_t> flagged;  // flags as drawn, before identity fallbacks
  std::size_t n_labels() const;
};

/// Uniform point in the AOI snapped to the nearest context (ties: lowest id);
/// activity follows the snapped context. Time fields are unchanged. May
/// return the original context.
EventRecord perturb_location(const EventRecord& event, const Substrate& substrate, Rng& rng);

/// Nearest context to `p` by Euclidean distance, ties to the lowest id.
std::uint32_t nearest_context(const Substrate& substrate, double x, double y);

/// New start time drawn uniformly from the open interval between the end of
/// the previous event and the start of the next one in `original`. Returns
/// nullopt (identity) at window boundaries or when the interval is empty.
std::optional<double> perturb_time(const EventWindow& original, std::size_t index, Rng& rng);

/// With probability p_norm the window is returned unchanged. Otherwise each
/// real event is flagged at flag_rate (at least one is forced), gets a mode
/// from the enabled set, and is perturbed. A flag whose perturbation turns
/// out to be the identity is reverted with label 0. If every flag reverts the
/// draw is repeated up to max_redraws times, after which one event is moved
/// by location. Location draws that snap back to the original context are
/// re-drawn so that label 1 always means a changed attribute.
PerturbedWindow corrupt(const EventWindow& window, const Substrate& substrate, const PerturbConfig& cfg, Rng& rng);

/// Donor events for the swap variant, grouped by context. An entity's
/// excluded set is every context it visits in the donor partition.
class DonorPool {
 public:
  DonorPool(const std::vector<EventRecord>& donors, std::size_t n_contexts);

  bool empty() const { return total_ == 0; }
  /// Draws a donor event whose context is outside `excluded` (a bitmap over
  /// contexts). Returns nullptr if no such donor exists.
  const EventRecord* draw(const std::vector<std::uint8_t>& excluded, Rng& rng) const;
  /// Bitmap of contexts entity `u` visits among the donors.
  std::vector<std::uint8_t> entity_contexts(std::uint32_t u) const;

 private:
  std::vector<std::vector<EventRecord>> by_context_;
  std::vector<std::vector<std::uint32_t>> contexts_of_entity_;
  std::size_t total_ = 0;
};

/// Each real event is, with probability swap_prob, moved to the context and
/// activity of a random donor event whose context lies outside the focal
/// entity's context set (its donor-partition contexts plus the window's).
/// Label 1 marks swapped events. With no eligible donor the event is kept.
PerturbedWindow swap_corrupt(const EventWindow& window, const DonorPool& donors, double swap_prob, Rng& rng);

}  // namespace meses
