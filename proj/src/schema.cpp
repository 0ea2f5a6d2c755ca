#include "meses/schema.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace meses {

using nlohmann::json;

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

json parse_line(const std::string& line, const std::string& path, std::size_t lineno) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw DataError("expected a JSON object");
    return j;
  } catch (const std::exception& e) {
    throw DataError(path + ":" + std::to_string(lineno) + ": malformed line: " + e.what());
  }
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw DataError(where + ": missing field \"" + key + "\"");
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_integer() || it->get<std::int64_t>() < 0)
        throw DataError(std::string("field \"") + key + "\" must be a non-negative integer");
    }
    return it->get<T>();
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  } catch (const std::exception& e) {
    throw DataError(where + ": bad field \"" + key + "\": " + e.what());
  }
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

void Substrate::update_aoi() {
  if (contexts.empty()) return;
  aoi.lo = aoi.hi = contexts[0].coords;
  for (const auto& c : contexts)
    for (int k = 0; k < 2; ++k) {
      aoi.lo[k] = std::min(aoi.lo[k], c.coords[k]);
      aoi.hi[k] = std::max(aoi.hi[k], c.coords[k]);
    }
}

std::uint32_t Corpus::n_entities() const {
  std::uint32_t n = 0;
  for (const auto& e : events) n = std::max(n, e.entity_id + 1);
  return n;
}

Substrate load_substrate(const std::string& path) {
  auto in = open_in(path);
  Substrate s;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, path, lineno);
    const std::string where = path + ":" + std::to_string(lineno);
    if (!header) {
      s.origin_iso = field<std::string>(j, "origin_iso", where);
      s.n_activities = field<std::uint32_t>(j, "n_activities", where);
      header = true;
      continue;
    }
    ContextRecord c;
    c.context_id = field<std::uint32_t>(j, "context_id", where);
    auto coords = field<std::vector<double>>(j, "coords", where);
    if (coords.size() != 2 || !std::isfinite(coords[0]) || !std::isfinite(coords[1]))
      throw DataError(where + ": coords must be two finite numbers");
    c.coords = {coords[0], coords[1]};
    c.activity_label = field<std::uint32_t>(j, "activity_label", where);
    if (c.activity_label >= s.n_activities) throw DataError(where + ": activity_label out of range");
    s.contexts.push_back(c);
  }
  if (!header) throw DataError(path + ": missing header line");
  if (s.contexts.empty()) throw DataError(path + ": substrate has no contexts");
  std::sort(s.contexts.begin(), s.contexts.end(),
            [](const ContextRecord& a, const ContextRecord& b) { return a.context_id < b.context_id; });
  for (std::size_t i = 0; i < s.contexts.size(); ++i)
    if (s.contexts[i].context_id != i)
      throw DataError(path + ": context ids must be unique and cover 0.." + std::to_string(s.contexts.size() - 1));
  s.update_aoi();
  return s;
}

void save_substrate(const std::string& path, const Substrate& s) {
  auto out = open_out(path);
  out << json{{"origin_iso", s.origin_iso}, {"n_activities", s.n_activities}}.dump() << '\n';
  for (const auto& c : s.contexts)
    out << json{{"context_id", c.context_id}, {"coords", {c.coords[0], c.coords[1]}}, {"activity_label", c.activity_label}}
               .dump()
        << '\n';
}

void normalize_events(std::vector<EventRecord>& events, const Substrate& s) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.context_id >= s.size())
      throw DataError("event " + std::to_string(i) + ": dangling context_id " + std::to_string(e.context_id));
    if (!std::isfinite(e.t_start)) throw DataError("event " + std::to_string(i) + ": non-finite t_start");
    if (e.has_duration && !(e.duration >= 0.0) )
      throw DataError("event " + std::to_string(i) + ": negative duration");
    if (!e.has_duration && e.duration != 0.0) throw DataError("event " + std::to_string(i) + ": point event with duration");
  }
  std::stable_sort(events.begin(), events.end(), [](const EventRecord& a, const EventRecord& b) {
    return a.entity_id != b.entity_id ? a.entity_id < b.entity_id : a.t_start < b.t_start;
  });
}

Corpus load_corpus(const std::string& events_path, const std::string& substrate_path) {
  Corpus c;
  c.substrate = load_substrate(substrate_path);
  auto in = open_in(events_path);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::uint8_t> labels;
  bool any_label = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, events_path, lineno);
    const std::string where = events_path + ":" + std::to_string(lineno);
    EventRecord e;
    e.entity_id = field<std::uint32_t>(j, "entity_id", where);
    e.context_id = field<std::uint32_t>(j, "context_id", where);
    e.t_start = field<double>(j, "t_start", where);
    e.activity = field<std::uint32_t>(j, "activity", where);
    if (auto it = j.find("duration"); it != j.end() && !it->is_null()) {
      e.duration = field<double>(j, "duration", where);
      e.has_duration = true;
      if (!(e.duration >= 0.0)) throw DataError(where + ": negative duration");
    }
    if (e.context_id >= c.substrate.size())
      throw DataError(where + ": dangling context_id " + std::to_string(e.context_id));
    if (!std::isfinite(e.t_start)) throw DataError(where + ": non-finite t_start");
    std::uint8_t lab = 0;
    if (auto it = j.find("anomaly"); it != j.end()) {
      const int v = field<int>(j, "anomaly", where);
      if (v != 0 && v != 1) throw DataError(where + ": anomaly must be 0 or 1");
      lab = static_cast<std::uint8_t>(v);
      any_label = true;
    }
    c.events.push_back(e);
    labels.push_back(lab);
  }
  // Sort events and carry labels along.
  std::vector<std::size_t> order(c.events.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = c.events[a];
    const auto& y = c.events[b];
    return x.entity_id != y.entity_id ? x.entity_id < y.entity_id : x.t_start < y.t_start;
  });
  std::vector<EventRecord> sorted;
  std::vector<std::uint8_t> sorted_labels;
  sorted.reserve(order.size());
  for (auto i : order) {
    sorted.push_back(c.events[i]);
    sorted_labels.push_back(labels[i]);
  }
  c.events = std::move(sorted);
  if (any_label) c.labels = AnomalyLabels(std::move(sorted_labels));
  return c;
}

void save_events(const std::string& path, const Corpus& corpus) {
  auto out = open_out(path);
  const std::vector<std::uint8_t>* labels = corpus.labels.present() ? &corpus.labels.reveal() : nullptr;
  for (std::size_t i = 0; i < corpus.events.size(); ++i) {
    const auto& e = corpus.events[i];
    json j = {{"entity_id", e.entity_id},
              {"context_id", e.context_id},
              {"t_start", e.t_start},
              {"duration", e.has_duration ? json(e.duration) : json(nullptr)},
              {"activity", e.activity}};
    if (labels) j["anomaly"] = (*labels)[i];
    out << j.dump() << '\n';
  }
}

std::size_t EventWindow::n_real() const { return static_cast<std::size_t>(std::count(pad.begin(), pad.end(), 0)); }

std::vector<EventWindow> chunk_windows(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows,
                                       std::size_t T) {
  if (T < 1) throw std::invalid_argument("window length T must be >= 1");
  std::vector<EventWindow> out;
  std::size_t i = 0;
  while (i < rows.size()) {
    const std::uint32_t u = events[rows[i]].entity_id;
    std::size_t j = i;
    while (j < rows.size() && events[rows[j]].entity_id == u) ++j;
    for (std::size_t s = i; s < j; s += T) {
      EventWindow w;
      w.entity_id = u;
      w.events.assign(T, EventRecord{});
      w.pad.assign(T, 1);
      w.rows.assign(T, -1);
      for (std::size_t k = 0; k < T && s + k < j; ++k) {
        w.events[k] = events[rows[s + k]];
        w.pad[k] = 0;
        w.rows[k] = static_cast<std::int64_t>(rows[s + k]);
      }
      for (std::size_t k = 0; k < T; ++k)
        if (w.pad[k]) w.events[k].entity_id = u;
      out.push_back(std::move(w));
    }
    i = j;
  }
  return out;
}

std::vector<EventWindow> chunk_windows(const std::vector<EventRecord>& events, std::size_t T) {
  std::vector<std::size_t> rows(events.size());
  std::iota(rows.begin(), rows.end(), 0);
  return chunk_windows(events, rows, T);
}

CorpusSplit temporal_split(const std::vector<EventRecord>& events, double train_frac, double val_frac_of_train) {
  auto check = [](double f, const char* name) {
    if (!(f > 0.0 && f < 1.0)) throw std::invalid_argument(std::string(name) + " must lie in (0,1)");
  };
  check(train_frac, "train_frac");
  check(val_frac_of_train, "val_frac_of_train");
  // Guards against 0.9*10 landing just below 9.
  auto floor_count = [](double f, std::size_t n) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  CorpusSplit s;
  std::size_t i = 0;
  while (i < events.size()) {
    std::size_t j = i;
    while (j < events.size() && events[j].entity_id == events[i].entity_id) ++j;
    const std::size_t n = j - i;
    const std::size_t n_train = floor_count(train_frac, n);
    const std::size_t n_proper = floor_count(1.0 - val_frac_of_train, n_train);
    const std::size_t n_val = n_train - n_proper;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t row = i + k;
      if (k < n_train) {
        s.train.push_back(row);
        (k < n_val ? s.val : s.train_proper).push_back(row);
      } else {
        s.test.push_back(row);
      }
    }
    i = j;
  }
  return s;
}

std::vector<EventRecord> select_rows(const std::vector<EventRecord>& events, const std::vector<std::size_t>& rows) {
  std::vector<EventRecord> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(events.at(r));
  return out;
}

}  // namespace meses
