#include "meses/cooc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>

#include "meses/checkpoint.hpp"

namespace meses {

static_assert(std::endian::native == std::endian::little, "index I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'C', 'O', 'O', 'C', 'I', 'D', 'X'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::val: return "val";
    case Partition::test: return "test";
    case Partition::all: return "all";
  }
  return "?";
}

Partition parse_partition(const std::string& s) {
  if (s == "train") return Partition::train;
  if (s == "val") return Partition::val;
  if (s == "test") return Partition::test;
  if (s == "all") return Partition::all;
  throw std::invalid_argument("unknown partition: " + s);
}

CoocIndex CoocIndex::build(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows,
                           std::size_t n_contexts, Partition partition) {
  CoocIndex idx;
  idx.partition_ = partition;
  idx.offsets_.assign(n_contexts + 1, 0);
  for (auto r : rows) ++idx.offsets_.at(events.at(r).context_id + 1);
  for (std::size_t c = 0; c < n_contexts; ++c) idx.offsets_[c + 1] += idx.offsets_[c];
  idx.positions_.resize(rows.size());
  std::vector<std::uint64_t> fill(idx.offsets_.begin(), idx.offsets_.end() - 1);
  for (auto r : rows) idx.positions_[fill[events[r].context_id]++] = static_cast<std::uint32_t>(r);
  for (std::size_t c = 0; c < n_contexts; ++c) {
    auto b = idx.positions_.begin() + static_cast<std::ptrdiff_t>(idx.offsets_[c]);
    auto e = idx.positions_.begin() + static_cast<std::ptrdiff_t>(idx.offsets_[c + 1]);
    std::sort(b, e, [&](std::uint32_t x, std::uint32_t y) {
      return events[x].t_start != events[y].t_start ? events[x].t_start < events[y].t_start : x < y;
    });
  }
  return idx;
}

std::span<const std::uint32_t> CoocIndex::bucket(std::uint32_t context) const {
  if (context + 1 >= offsets_.size()) return {};
  return std::span<const std::uint32_t>(positions_).subspan(offsets_[context], offsets_[context + 1] - offsets_[context]);
}

void CoocIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  auto put = [&](const void* p, std::size_t n) { out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  put(kMagic, 8);
  put(&kVersion, 4);
  const auto tag = static_cast<std::uint8_t>(partition_);
  put(&tag, 1);
  const std::uint64_t nb = n_buckets(), np = positions_.size();
  put(&nb, 8);
  put(&np, 8);
  put(offsets_.data(), offsets_.size() * 8);
  put(positions_.data(), positions_.size() * 4);
  if (!out) throw std::runtime_error("write failed: " + path);
}

CoocIndex CoocIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto get = [&](void* p, std::size_t n) {
    if (!in.read(static_cast<char*>(p), static_cast<std::streamsize>(n))) throw FormatError(path + ": truncated index");
  };
  char magic[8];
  get(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": not a co-occurrence index");
  std::uint32_t version = 0;
  get(&version, 4);
  if (version != kVersion) throw FormatError(path + ": unsupported index version " + std::to_string(version));
  std::uint8_t tag = 0;
  get(&tag, 1);
  if (tag > 3) throw FormatError(path + ": bad partition tag");
  std::uint64_t nb = 0, np = 0;
  get(&nb, 8);
  get(&np, 8);
  CoocIndex idx;
  idx.partition_ = static_cast<Partition>(tag);
  idx.offsets_.resize(nb + 1);
  idx.positions_.resize(np);
  get(idx.offsets_.data(), idx.offsets_.size() * 8);
  get(idx.positions_.data(), idx.positions_.size() * 4);
  if (idx.offsets_.front() != 0 || idx.offsets_.back() != np || !std::is_sorted(idx.offsets_.begin(), idx.offsets_.end()))
    throw FormatError(path + ": inconsistent offset table");
  return idx;
}

std::size_t PeerSet::n_peers() const {
  return static_cast<std::size_t>(std::count_if(peers.begin(), peers.end(), [](std::int64_t p) { return p >= 0; }));
}

double peer_distance(const EventRecord& a, const EventRecord& b) {
  return std::abs(a.t_start - b.t_start) + std::abs(a.t_end() - b.t_end());
}

bool passes_overlap(const EventRecord& focal, const EventRecord& c, double min_overlap) {
  if (min_overlap <= 0.0) return true;
  if (focal.duration <= 0.0) return c.t_start <= focal.t_start && focal.t_start <= c.t_end();
  const double inter = std::min(focal.t_end(), c.t_end()) - std::max(focal.t_start, c.t_start);
  return inter > 0.0 && inter / focal.duration >= min_overlap;
}

PeerSet retrieve_peers(const CoocIndex& index, const std::vector<EventRecord>& events, const EventRecord& focal,
                       std::size_t C, double min_overlap) {
  if (C < 1) throw std::invalid_argument("clique size C must be >= 1");
  const std::size_t k = C - 1;
  PeerSet out{std::vector<std::int64_t>(k, -1), std::vector<std::uint8_t>(C, 1)};
  out.mask[0] = 0;
  if (k == 0) return out;
  using Entry = std::pair<double, std::uint32_t>;  // (distance, row); max-heap keeps the worst on top
  std::priority_queue<Entry> heap;
  for (std::uint32_t row : index.bucket(focal.context_id)) {
    const EventRecord& c = events[row];
    if (c.entity_id == focal.entity_id || !passes_overlap(focal, c, min_overlap)) continue;
    Entry e{peer_distance(focal, c), row};
    if (heap.size() < k) {
      heap.push(e);
    } else if (e < heap.top()) {
      heap.pop();
      heap.push(e);
    }
  }
  std::vector<Entry> kept;
  while (!heap.empty()) {
    kept.push_back(heap.top());
    heap.pop();
  }
  std::reverse(kept.begin(), kept.end());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    out.peers[i] = kept[i].second;
    out.mask[i + 1] = 0;
  }
  return out;
}

}  // namespace meses
