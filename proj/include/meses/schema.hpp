#pragma once

// Event-stream data model, corpus I/O, windowing and temporal splits.

#include <array>
#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace meses {

/// Input data that fails validation (bad JSON, dangling references, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ContextRecord {
  std::uint32_t context_id = 0;
  std::array<double, 2> coords{};
  std::uint32_t activity_label = 0;
};

struct BoundingBox {
  std::array<double, 2> lo{};
  std::array<double, 2> hi{};
};

/// Context ids are dense: contexts[i].context_id == i.
struct Substrate {
  std::string origin_iso;
  std::uint32_t n_activities = 0;
  std::vector<ContextRecord> contexts;
  BoundingBox aoi;

  std::size_t size() const { return contexts.size(); }
  const ContextRecord& at(std::uint32_t id) const { return contexts.at(id); }
  /// Recomputes `aoi` as the tight bounding box of the coordinates.
  void update_aoi();
};

struct EventRecord {
  std::uint32_t entity_id = 0;
  std::uint32_t context_id = 0;
  double t_start = 0.0;  // hours since the corpus origin
  double duration = 0.0;  // 0 for point events
  bool has_duration = false;
  std::uint32_t activity = 0;

  double t_end() const { return t_start + duration; }
  bool operator==(const EventRecord&) const = default;
};

/// Per-event anomaly labels for benchmark corpora. Every read goes through
/// reveal(), which counts accesses so tests can assert that training code
/// paths never touch the labels.
class AnomalyLabels {
 public:
  AnomalyLabels() = default;
  explicit AnomalyLabels(std::vector<std::uint8_t> labels) : labels_(std::move(labels)) {}
  AnomalyLabels(const AnomalyLabels& o) : labels_(o.labels_) {}
  AnomalyLabels& operator=(const AnomalyLabels& o) {
    labels_ = o.labels_;
    return *this;
  }

  bool present() const { return !labels_.empty(); }
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::uint8_t>& reveal() const {
    ++reads_;
    return labels_;
  }
  std::size_t access_count() const { return reads_.load(); }

 private:
  std::vector<std::uint8_t> labels_;
  mutable std::atomic<std::size_t> reads_{0};
};

/// Events sorted by (entity_id, t_start), ties in input order. An event's
/// position in `events` is its global row index, used as the event key.
struct Corpus {
  Substrate substrate;
  std::vector<EventRecord> events;
  AnomalyLabels labels;

  std::uint32_t n_entities() const;
};

Substrate load_substrate(const std::string& path);
void save_substrate(const std::string& path, const Substrate& s);

/// Reads both files, validates references, sorts events. The "anomaly"
/// field is kept in corpus.labels (all-zero labels when some lines lack it).
Corpus load_corpus(const std::string& events_path, const std::string& substrate_path);
/// Canonical JSONL. Labels are written only when present.
void save_events(const std::string& path, const Corpus& corpus);

/// Validates and sorts in place (stable on ties).
void normalize_events(std::vector<EventRecord>& events, const Substrate& s);

struct EventWindow {
  std::uint32_t entity_id = 0;
  std::vector<EventRecord> events;  // T slots; pads are default records
  std::vector<std::uint8_t> pad;    // 1 = padded slot
  std::vector<std::int64_t> rows;   // global row index, -1 on pads

  std::size_t length() const { return events.size(); }
  std::size_t n_real() const;
};

/// Splits each entity's stream (restricted to `rows`, which must be sorted
/// by entity then time) into consecutive non-overlapping windows of T slots.
std::vector<EventWindow> chunk_windows(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows,
                                       std::size_t T);
std::vector<EventWindow> chunk_windows(const std::vector<EventRecord>& events, std::size_t T);

/// Per-entity chronological split. `train` is the first floor(train_frac*n)
/// events of each stream and `test` the rest. Inside train, `val` is the
/// earliest n_train - floor((1-val_frac_of_train)*n_train) events and
/// `train_proper` the remainder, so train_proper, val and test are disjoint.
struct CorpusSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> train_proper;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

CorpusSplit temporal_split(const std::vector<EventRecord>& events, double train_frac = 0.9,
                           double val_frac_of_train = 0.2);

/// Events selected by row indices, in order.
std::vector<EventRecord> select_rows(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows);

}  // namespace meses
