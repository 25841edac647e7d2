#pragma once

// Interaction-log ingestion and chronological segmentation.
//
// Dense ids are assigned in order of first appearance in the time-sorted
// log, so within each entity kind a larger id always means a more recently
// introduced user or item. Several downstream components (tie-breaking in the
// allocator, table growth between segments) rely on that ordering.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace embudget {

using EntityId = std::int32_t;

struct Event {
  EntityId user = 0;
  EntityId item = 0;
  std::int64_t timestamp = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

using EventList = std::vector<Event>;

struct InteractionLog {
  EventList events;
  std::int32_t user_count = 0;
  std::int32_t item_count = 0;
  // dense id -> original external id
  std::vector<std::string> user_names;
  std::vector<std::string> item_names;
};

struct LoadOptions {
  // Iterative k-core filtering (0 disables). Applied to raw rows before ids
  // are remapped, repeated until no user or item falls below k.
  int k_core = 0;
};

// Reads a CSV or TSV file of user,item,timestamp rows. The delimiter is
// detected from the first non-empty line; a header is recognised when that
// line's timestamp column is not an integer.
InteractionLog load_interactions(const std::filesystem::path& path,
                                 const LoadOptions& options = {});

// Same as load_interactions, over in-memory text.
InteractionLog parse_interactions(const std::string& text,
                                  const LoadOptions& options = {});

// Builds a log from already-dense events (stable-sorted by timestamp; ids are
// kept as given, counts are max id + 1).
InteractionLog make_log(EventList events);

// Writes "original<TAB>dense" lines, one file per entity kind.
void write_id_mapping(const InteractionLog& log,
                      const std::filesystem::path& users_path,
                      const std::filesystem::path& items_path);

// Half-open event index range [begin, end) of the sorted log.
struct SegmentRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::int64_t new_entity_count = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const SegmentRange&, const SegmentRange&) = default;
};

// A boundary is emitted each time first-seen users plus first-seen items since
// the previous boundary reaches m. Trailing events form the last range.
std::vector<SegmentRange> segment_stream(const InteractionLog& log,
                                         std::int64_t m);

struct TrainTestSplit {
  EventList train;
  EventList test;
};

// Earliest ceil(fraction * n) events become train, the rest test.
TrainTestSplit split_segment(std::span<const Event> events,
                             double train_fraction);

struct Segment {
  int index = 0;  // 1-based, matches D_t
  SegmentRange range;
  EventList train;
  EventList test;
  std::int64_t new_entity_count = 0;
  // Entity counts known once this segment's training portion has streamed
  // in (ids are chronological, so this is max id seen + 1).
  std::int32_t user_count = 0;
  std::int32_t item_count = 0;
};

// Segments the log and splits every segment. A segment too small to split
// (fewer than two events) is merged into its predecessor.
std::vector<Segment> partition_stream(const InteractionLog& log,
                                      std::int64_t m, double train_fraction);

struct Reservoir {
  EventList events;
  std::size_t capacity = 0;
  double gamma = 0.0;
};

// Uniform sample without replacement of min(floor(gamma * train_size),
// |history|) events. Sampled events keep their chronological order.
Reservoir build_reservoir(std::span<const Event> history, double gamma,
                          std::size_t train_size, std::uint64_t seed);

// History available to segment `t` (1-based): every event of segments
// 1..t-2 plus the training portion of segment t-1.
EventList reservoir_history(const std::vector<Segment>& segments, int t);

struct FrequencyTable {
  std::vector<std::int64_t> user_counts;
  std::vector<std::int64_t> item_counts;
  int source = 0;
};

// Occurrence counts over the multiset union of train and reservoir. Tables
// are sized to cover the given entity counts (or the largest id seen).
FrequencyTable frequency_counts(std::span<const Event> train,
                                const Reservoir& reservoir,
                                std::int32_t user_count = 0,
                                std::int32_t item_count = 0,
                                int source = 0);

// JSON manifest of per-segment index ranges and counts.
std::string segment_manifest_json(const InteractionLog& log,
                                  const std::vector<Segment>& segments,
                                  std::int64_t m, double train_fraction);

}  // namespace embudget
