#include "embudget/stream_corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string_view>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "embudget/error.hpp"

namespace embudget {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r' || s.front() == '"'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' ||
                        s.back() == '\r' || s.back() == '"'))
    s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

bool parse_int64(std::string_view s, std::int64_t& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

struct RawRow {
  std::int32_t user;  // interned in file order
  std::int32_t item;
  std::int64_t timestamp;
};

class Interner {
 public:
  std::int32_t intern(std::string_view s) {
    auto [it, inserted] =
        index_.try_emplace(std::string(s), static_cast<std::int32_t>(names_.size()));
    if (inserted) names_.emplace_back(s);
    return it->second;
  }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::unordered_map<std::string, std::int32_t> index_;
  std::vector<std::string> names_;
};

void apply_k_core(std::vector<RawRow>& rows, std::size_t users,
                  std::size_t items, int k) {
  if (k <= 1) return;
  bool changed = true;
  while (changed) {
    std::vector<std::int64_t> ucount(users, 0), icount(items, 0);
    for (const auto& r : rows) {
      ++ucount[r.user];
      ++icount[r.item];
    }
    auto keep = [&](const RawRow& r) {
      return ucount[r.user] >= k && icount[r.item] >= k;
    };
    auto it = std::stable_partition(rows.begin(), rows.end(), keep);
    changed = it != rows.end();
    rows.erase(it, rows.end());
  }
}

InteractionLog finalize(std::vector<RawRow> rows,
                        const std::vector<std::string>& user_names,
                        const std::vector<std::string>& item_names) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RawRow& a, const RawRow& b) {
                     return a.timestamp < b.timestamp;
                   });
  InteractionLog log;
  std::vector<std::int32_t> umap(user_names.size(), -1);
  std::vector<std::int32_t> imap(item_names.size(), -1);
  log.events.reserve(rows.size());
  for (const auto& r : rows) {
    if (umap[r.user] < 0) {
      umap[r.user] = log.user_count++;
      log.user_names.push_back(user_names[r.user]);
    }
    if (imap[r.item] < 0) {
      imap[r.item] = log.item_count++;
      log.item_names.push_back(item_names[r.item]);
    }
    log.events.push_back({umap[r.user], imap[r.item], r.timestamp});
  }
  return log;
}

}  // namespace

InteractionLog parse_interactions(const std::string& text,
                                  const LoadOptions& options) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  char delim = 0;
  bool first = true;
  Interner users, items;
  std::vector<RawRow> rows;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (delim == 0) delim = line.find('\t') != std::string::npos ? '\t' : ',';
    auto fields = split_fields(line, delim);
    if (fields.size() != 3)
      throw ParseError(line_no, "expected 3 columns (user,item,timestamp), got " +
                                    std::to_string(fields.size()));
    std::int64_t ts = 0;
    bool ts_ok = parse_int64(fields[2], ts);
    if (first) {
      first = false;
      if (!ts_ok) continue;  // header row
    }
    if (!ts_ok)
      throw ParseError(line_no, "timestamp is not an integer: '" +
                                    std::string(fields[2]) + "'");
    if (fields[0].empty() || fields[1].empty())
      throw ParseError(line_no, "empty user or item id");
    rows.push_back({users.intern(fields[0]), items.intern(fields[1]), ts});
  }
  if (rows.empty()) throw EmptyLogError("interaction file contains no events");

  apply_k_core(rows, users.names().size(), items.names().size(),
               options.k_core);
  if (rows.empty())
    throw EmptyLogError("no events survive " + std::to_string(options.k_core) +
                        "-core filtering");
  return finalize(std::move(rows), users.names(), items.names());
}

InteractionLog load_interactions(const std::filesystem::path& path,
                                 const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_interactions(buf.str(), options);
}

InteractionLog make_log(EventList events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) {
                     return a.timestamp < b.timestamp;
                   });
  InteractionLog log;
  for (const auto& e : events) {
    if (e.user < 0 || e.item < 0)
      throw ValidationError("negative entity id in event list");
    log.user_count = std::max(log.user_count, e.user + 1);
    log.item_count = std::max(log.item_count, e.item + 1);
  }
  log.events = std::move(events);
  for (std::int32_t u = 0; u < log.user_count; ++u)
    log.user_names.push_back(std::to_string(u));
  for (std::int32_t i = 0; i < log.item_count; ++i)
    log.item_names.push_back(std::to_string(i));
  return log;
}

void write_id_mapping(const InteractionLog& log,
                      const std::filesystem::path& users_path,
                      const std::filesystem::path& items_path) {
  auto dump = [](const std::vector<std::string>& names,
                 const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw Error("io_error", "cannot write " + p.string());
    for (std::size_t i = 0; i < names.size(); ++i)
      out << names[i] << '\t' << i << '\n';
  };
  dump(log.user_names, users_path);
  dump(log.item_names, items_path);
}

std::vector<SegmentRange> segment_stream(const InteractionLog& log,
                                         std::int64_t m) {
  if (m < 1) throw ValidationError("segment threshold m must be >= 1");
  std::vector<SegmentRange> out;
  std::vector<char> seen_user(static_cast<std::size_t>(log.user_count), 0);
  std::vector<char> seen_item(static_cast<std::size_t>(log.item_count), 0);
  SegmentRange cur;
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const auto& e = log.events[i];
    if (!seen_user[e.user]) {
      seen_user[e.user] = 1;
      ++cur.new_entity_count;
    }
    if (!seen_item[e.item]) {
      seen_item[e.item] = 1;
      ++cur.new_entity_count;
    }
    if (cur.new_entity_count >= m) {
      cur.end = i + 1;
      out.push_back(cur);
      cur = SegmentRange{i + 1, i + 1, 0};
    }
  }
  if (cur.begin < log.events.size()) {
    cur.end = log.events.size();
    out.push_back(cur);
  }
  return out;
}

TrainTestSplit split_segment(std::span<const Event> events,
                             double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie in (0, 1)");
  if (events.size() < 2)
    throw DegenerateSplitError("cannot split a segment of " +
                               std::to_string(events.size()) + " event(s)");
  auto n = events.size();
  auto n_train = static_cast<std::size_t>(
      std::ceil(train_fraction * static_cast<double>(n) - 1e-9));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  TrainTestSplit out;
  out.train.assign(events.begin(), events.begin() + n_train);
  out.test.assign(events.begin() + n_train, events.end());
  return out;
}

std::vector<Segment> partition_stream(const InteractionLog& log,
                                      std::int64_t m, double train_fraction) {
  auto ranges = segment_stream(log, m);
  std::vector<SegmentRange> merged;
  for (const auto& r : ranges) {
    if (r.size() < 2 && !merged.empty()) {
      merged.back().end = r.end;
      merged.back().new_entity_count += r.new_entity_count;
    } else {
      merged.push_back(r);
    }
  }
  // A tiny leading range is merged forward instead.
  if (merged.size() > 1 && merged.front().size() < 2) {
    merged[1].begin = merged[0].begin;
    merged[1].new_entity_count += merged[0].new_entity_count;
    merged.erase(merged.begin());
  }

  std::vector<Segment> out;
  std::int32_t max_user = -1, max_item = -1;
  std::span<const Event> all(log.events);
  for (std::size_t s = 0; s < merged.size(); ++s) {
    const auto& r = merged[s];
    auto split = split_segment(all.subspan(r.begin, r.size()), train_fraction);
    Segment seg;
    seg.index = static_cast<int>(s) + 1;
    seg.range = r;
    seg.new_entity_count = r.new_entity_count;
    for (const auto& e : split.train) {
      max_user = std::max(max_user, e.user);
      max_item = std::max(max_item, e.item);
    }
    seg.user_count = max_user + 1;
    seg.item_count = max_item + 1;
    seg.train = std::move(split.train);
    seg.test = std::move(split.test);
    out.push_back(std::move(seg));
  }
  return out;
}

Reservoir build_reservoir(std::span<const Event> history, double gamma,
                          std::size_t train_size, std::uint64_t seed) {
  if (gamma < 0.0) throw ValidationError("reservoir gamma must be >= 0");
  Reservoir r;
  r.gamma = gamma;
  r.capacity = static_cast<std::size_t>(
      std::floor(gamma * static_cast<double>(train_size) + 1e-9));
  auto take = std::min(r.capacity, history.size());
  if (take == 0) return r;
  std::mt19937_64 rng(seed);
  r.events.reserve(take);
  std::sample(history.begin(), history.end(), std::back_inserter(r.events),
              take, rng);
  return r;
}

EventList reservoir_history(const std::vector<Segment>& segments, int t) {
  EventList out;
  for (const auto& seg : segments) {
    if (seg.index <= t - 2) {
      out.insert(out.end(), seg.train.begin(), seg.train.end());
      out.insert(out.end(), seg.test.begin(), seg.test.end());
    } else if (seg.index == t - 1) {
      out.insert(out.end(), seg.train.begin(), seg.train.end());
    }
  }
  return out;
}

FrequencyTable frequency_counts(std::span<const Event> train,
                                const Reservoir& reservoir,
                                std::int32_t user_count,
                                std::int32_t item_count, int source) {
  FrequencyTable f;
  f.source = source;
  auto grow = [](std::vector<std::int64_t>& v, std::int32_t id) {
    if (static_cast<std::size_t>(id) >= v.size()) v.resize(id + 1, 0);
  };
  f.user_counts.assign(static_cast<std::size_t>(std::max(0, user_count)), 0);
  f.item_counts.assign(static_cast<std::size_t>(std::max(0, item_count)), 0);
  auto add = [&](const Event& e) {
    grow(f.user_counts, e.user);
    grow(f.item_counts, e.item);
    ++f.user_counts[e.user];
    ++f.item_counts[e.item];
  };
  for (const auto& e : train) add(e);
  for (const auto& e : reservoir.events) add(e);
  return f;
}

std::string segment_manifest_json(const InteractionLog& log,
                                  const std::vector<Segment>& segments,
                                  std::int64_t m, double train_fraction) {
  nlohmann::ordered_json j;
  j["event_count"] = log.events.size();
  j["user_count"] = log.user_count;
  j["item_count"] = log.item_count;
  j["m"] = m;
  j["train_fraction"] = train_fraction;
  auto& arr = j["segments"] = nlohmann::ordered_json::array();
  for (const auto& s : segments) {
    nlohmann::ordered_json e;
    e["index"] = s.index;
    e["begin"] = s.range.begin;
    e["end"] = s.range.end;
    e["train_begin"] = s.range.begin;
    e["train_end"] = s.range.begin + s.train.size();
    e["test_begin"] = s.range.begin + s.train.size();
    e["test_end"] = s.range.end;
    e["train_events"] = s.train.size();
    e["test_events"] = s.test.size();
    e["new_entities"] = s.new_entity_count;
    e["user_count"] = s.user_count;
    e["item_count"] = s.item_count;
    arr.push_back(std::move(e));
  }
  return j.dump(2);
}

}  // namespace embudget
