#pragma once

// Context-keyed inverted index over one partition's events and the
// per-event peer retrieval that fills the co-occurrence axis.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "meses/schema.hpp"

namespace meses {

enum class Partition : std::uint8_t { train = 0, val = 1, test = 2, all = 3 };

const char* partition_name(Partition p);
Partition parse_partition(const std::string& s);

class CoocIndex {
 public:
  CoocIndex() = default;

  /// Buckets every row of `rows` under its context; each bucket is ordered by
  /// (t_start, row). Bucketing is a counting pass over the rows.
  static CoocIndex build(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows,
                         std::size_t n_contexts, Partition partition);

  Partition partition() const { return partition_; }
  std::size_t n_buckets() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t n_events() const { return positions_.size(); }
  /// Global row positions of the events at `context`.
  std::span<const std::uint32_t> bucket(std::uint32_t context) const;

  /// Binary layout documented in docs/formats.md.
  void save(const std::string& path) const;
  static CoocIndex load(const std::string& path);

  bool operator==(const CoocIndex&) const = default;

 private:
  Partition partition_ = Partition::train;
  std::vector<std::uint64_t> offsets_;
  std::vector<std::uint32_t> positions_;
};

struct PeerSet {
  std::vector<std::int64_t> peers;  // C-1 global rows, -1 for padded slots
  std::vector<std::uint8_t> mask;   // C entries, slot 0 (focal) always 0, 1 = masked

  std::size_t n_peers() const;
};

/// |Δτ| + |Δ(τ+δ)| with δ = 0 for point events.
double peer_distance(const EventRecord& a, const EventRecord& b);

/// Whether candidate `c` passes the overlap filter against `focal`:
/// intersection length over the focal duration must reach min_overlap. A
/// point focal event instead requires the candidate interval to contain it.
/// min_overlap == 0 disables the filter.
bool passes_overlap(const EventRecord& focal, const EventRecord& c, double min_overlap);

/// The C-1 nearest events of other entities at focal.context_id, ties by
/// ascending row. Keeps a bounded heap, O(k log C) for bucket size k.
PeerSet retrieve_peers(const CoocIndex& index, const std::vector<EventRecord>& events, const EventRecord& focal,
                       std::size_t C, double min_overlap = 0.0);

}  // namespace meses
