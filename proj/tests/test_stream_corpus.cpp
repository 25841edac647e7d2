#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "embudget/error.hpp"
#include "embudget/stream_corpus.hpp"

using namespace embudget;

namespace {

EventList random_events(std::mt19937_64& rng, int n, int users, int items) {
  std::uniform_int_distribution<int> pu(0, users - 1), pi(0, items - 1);
  std::uniform_int_distribution<int> pt(0, 50);
  EventList ev;
  for (int i = 0; i < n; ++i) ev.push_back({pu(rng), pi(rng), pt(rng)});
  return ev;
}

std::string random_csv(std::mt19937_64& rng, int n, int users, int items) {
  std::string s = "user,item,ts\n";
  for (const auto& e : random_events(rng, n, users, items))
    s += "u" + std::to_string(e.user) + ",i" + std::to_string(e.item) + "," +
         std::to_string(e.timestamp) + "\n";
  return s;
}

}  // namespace

TEST_CASE("rows are re-sorted by timestamp") {
  auto log = parse_interactions("a,x,30\nb,y,10\nc,z,20\n");
  REQUIRE(log.events.size() == 3);
  CHECK(log.events[0].timestamp == 10);
  CHECK(log.events[1].timestamp == 20);
  CHECK(log.events[2].timestamp == 30);
  // ids follow chronological first appearance: b, c, a
  CHECK(log.user_names == std::vector<std::string>{"b", "c", "a"});
  CHECK(log.events[0].user == 0);
  CHECK(log.events[2].user == 2);
}

TEST_CASE("string ids become dense ids in appearance order") {
  auto log = parse_interactions("u1,i9,5\n");
  CHECK(log.events[0] == Event{0, 0, 5});
  CHECK(log.user_count == 1);
  CHECK(log.item_count == 1);
}

TEST_CASE("header detection, tabs and quoting") {
  auto log = parse_interactions("user\titem\ttime\n\"7\"\t 3 \t100\n8\t3\t101\n");
  CHECK(log.events.size() == 2);
  CHECK(log.user_count == 2);
  CHECK(log.item_count == 1);
  CHECK(log.user_names[0] == "7");
}

TEST_CASE("stable order for equal timestamps") {
  auto log = parse_interactions("a,x,1\nb,y,1\nc,z,1\n");
  CHECK(log.user_names == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("malformed rows report their line number") {
  try {
    parse_interactions("a,b,1\nc,d\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.kind() == "parse_error");
  }
  CHECK_THROWS_AS(parse_interactions("a,b,1\nc,d,notanumber\n"), ParseError);
}

TEST_CASE("empty inputs") {
  CHECK_THROWS_AS(parse_interactions(""), EmptyLogError);
  CHECK_THROWS_AS(parse_interactions("user,item,timestamp\n\n"), EmptyLogError);
  CHECK_THROWS_AS(load_interactions("/nonexistent/file.csv"), Error);
}

TEST_CASE("k-core filtering runs to a fixpoint") {
  // u0 and u1 each have 2 items; u2 has 1. Removing u2 drops i2 to one
  // interaction, which then drops nothing further for k=2.
  std::string csv = "u0,i0,1\nu0,i1,2\nu1,i0,3\nu1,i1,4\nu2,i2,5\nu3,i2,6\n";
  auto log = parse_interactions(csv, LoadOptions{2});
  CHECK(log.events.size() == 4);
  CHECK(log.user_count == 2);
  CHECK(log.item_count == 2);
  CHECK_THROWS_AS(parse_interactions("a,b,1\n", LoadOptions{2}), EmptyLogError);
}

TEST_CASE("file round trip and id mapping") {
  auto dir = std::filesystem::temp_directory_path() / "embudget_corpus_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "log.tsv") << "alice\tbook\t2\nbob\tbook\t1\n";
  }
  auto log = load_interactions(dir / "log.tsv");
  write_id_mapping(log, dir / "u.tsv", dir / "i.tsv");
  std::ifstream u(dir / "u.tsv");
  std::string line;
  std::getline(u, line);
  CHECK(line == "bob\t0");
  std::getline(u, line);
  CHECK(line == "alice\t1");
}

TEST_CASE("segment boundaries on a counting stream") {
  // 45 events each introducing one new user and reusing item 0 except the
  // first, which also introduces item 0.
  EventList ev;
  for (int i = 0; i < 44; ++i) ev.push_back({i, 0, i});
  auto log = make_log(ev);
  // 44 users + 1 item = 45 entities, m = 15 -> 3 segments
  auto segs = segment_stream(log, 15);
  REQUIRE(segs.size() == 3);
  CHECK(segs[0].end == 14);  // event 13 brings user 13 + item 0 = 15
  CHECK(segs[0].new_entity_count == 15);
  CHECK(segs[1].new_entity_count == 15);
  CHECK(segs[2].new_entity_count == 15);
  CHECK(segs[2].end == 44);

  CHECK(segment_stream(log, 1000).size() == 1);
  CHECK_THROWS_AS(segment_stream(log, 0), ValidationError);
}

TEST_CASE("segments partition the log exactly") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    auto log = parse_interactions(random_csv(rng, 200, 40, 30));
    std::int64_t m = 1 + static_cast<std::int64_t>(rng() % 20);
    auto ranges = segment_stream(log, m);
    std::size_t pos = 0;
    for (const auto& r : ranges) {
      CHECK(r.begin == pos);
      CHECK(r.end > r.begin);
      pos = r.end;
    }
    CHECK(pos == log.events.size());

    auto segs = partition_stream(log, m, 0.8);
    EventList joined;
    for (const auto& s : segs) {
      if (!s.train.empty() && !s.test.empty())
        CHECK(s.train.back().timestamp <= s.test.front().timestamp);
      joined.insert(joined.end(), s.train.begin(), s.train.end());
      joined.insert(joined.end(), s.test.begin(), s.test.end());
      CHECK(s.train.size() >= 1);
      CHECK(s.test.size() >= 1);
    }
    CHECK(joined == log.events);
    for (std::size_t k = 1; k < segs.size(); ++k) {
      CHECK(segs[k].user_count >= segs[k - 1].user_count);
      CHECK(segs[k].item_count >= segs[k - 1].item_count);
    }
  }
}

TEST_CASE("split sizes") {
  EventList ev(100);
  for (int i = 0; i < 100; ++i) ev[i] = {0, 0, i};
  auto s = split_segment(ev, 0.8);
  CHECK(s.train.size() == 80);
  CHECK(s.test.size() == 20);

  auto five = split_segment(std::span<const Event>(ev).first(5), 0.8);
  CHECK(five.train.size() == 4);
  CHECK(five.test.size() == 1);

  auto two = split_segment(std::span<const Event>(ev).first(2), 0.5);
  CHECK(two.train.size() == 1);
  CHECK(two.test.size() == 1);

  CHECK_THROWS_AS(split_segment(std::span<const Event>(ev).first(1), 0.8),
                  DegenerateSplitError);
  CHECK_THROWS_AS(split_segment(ev, 1.0), ValidationError);
  CHECK_THROWS_AS(split_segment(ev, 0.0), ValidationError);
}

TEST_CASE("reservoir size and sampling") {
  EventList hist;
  for (int i = 0; i < 500; ++i) hist.push_back({i % 7, i % 11, i});

  auto r = build_reservoir(hist, 0.1, 1000, 3);
  CHECK(r.events.size() == 100);
  CHECK(r.capacity == 100);

  CHECK(build_reservoir(hist, 0.0, 1000, 3).events.empty());

  auto small = build_reservoir(std::span<const Event>(hist).first(50), 0.1, 1000, 3);
  CHECK(small.events.size() == 50);

  CHECK(build_reservoir({}, 0.5, 10, 1).events.empty());

  // without replacement and order-preserving: timestamps strictly increase
  for (std::size_t i = 1; i < r.events.size(); ++i)
    CHECK(r.events[i - 1].timestamp < r.events[i].timestamp);

  auto again = build_reservoir(hist, 0.1, 1000, 3);
  CHECK(again.events == r.events);
  auto other = build_reservoir(hist, 0.1, 1000, 4);
  CHECK(other.events != r.events);
}

TEST_CASE("reservoir history never touches the current segment") {
  std::mt19937_64 rng(11);
  auto log = parse_interactions(random_csv(rng, 400, 60, 50));
  auto segs = partition_stream(log, 15, 0.8);
  REQUIRE(segs.size() >= 3);
  for (const auto& s : segs) {
    auto hist = reservoir_history(segs, s.index);
    auto res = build_reservoir(hist, 0.5, s.train.size(), 1);
    std::size_t cur_begin = s.range.begin;
    // history is a prefix of the log ending before the current segment
    CHECK(hist.size() <= cur_begin);
    for (std::size_t i = 0; i < hist.size(); ++i) CHECK(hist[i] == log.events[i]);
    if (s.index >= 2) {
      const auto& prev = segs[static_cast<std::size_t>(s.index) - 2];
      CHECK(hist.size() == prev.range.begin + prev.train.size());
    } else {
      CHECK(hist.empty());
    }
    CHECK(res.events.size() == std::min(hist.size(), res.capacity));
  }
}

TEST_CASE("frequency counts match a multiset oracle") {
  // spec example
  Reservoir r;
  r.events = {{0, 1, 0}};
  auto f = frequency_counts(EventList{{0, 0, 0}}, r);
  CHECK(f.user_counts[0] == 2);
  CHECK(f.item_counts[0] == 1);
  CHECK(f.item_counts[1] == 1);

  auto empty = frequency_counts({}, Reservoir{}, 3, 2);
  CHECK(empty.user_counts == std::vector<std::int64_t>{0, 0, 0});
  CHECK(empty.item_counts == std::vector<std::int64_t>{0, 0});

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto train = random_events(rng, 40, 6, 9);
    Reservoir res;
    res.events = random_events(rng, 25, 6, 9);
    res.events.push_back(train.front());  // duplicate across both sets
    std::multiset<int> us, is;
    for (const auto* src : {&train, &res.events})
      for (const auto& e : *src) {
        us.insert(e.user);
        is.insert(e.item);
      }
    auto ft = frequency_counts(train, res, 6, 9);
    std::int64_t tot_u = 0, tot_i = 0;
    for (int u = 0; u < 6; ++u) {
      CHECK(ft.user_counts[u] == static_cast<std::int64_t>(us.count(u)));
      tot_u += ft.user_counts[u];
    }
    for (int i = 0; i < 9; ++i) {
      CHECK(ft.item_counts[i] == static_cast<std::int64_t>(is.count(i)));
      tot_i += ft.item_counts[i];
    }
    CHECK(tot_u == static_cast<std::int64_t>(train.size() + res.events.size()));
    CHECK(tot_i == tot_u);
  }
}

TEST_CASE("segmentation is deterministic and the manifest is stable") {
  std::mt19937_64 a(3), b(3);
  auto la = parse_interactions(random_csv(a, 300, 50, 40));
  auto lb = parse_interactions(random_csv(b, 300, 50, 40));
  auto sa = partition_stream(la, 20, 0.8);
  auto sb = partition_stream(lb, 20, 0.8);
  CHECK(segment_manifest_json(la, sa, 20, 0.8) ==
        segment_manifest_json(lb, sb, 20, 0.8));
}

TEST_CASE("tiny trailing ranges are merged into their predecessor") {
  // 4 events; with m=2 the last range holds a single event.
  EventList ev{{0, 0, 0}, {0, 0, 1}, {1, 1, 2}, {2, 2, 3}};
  auto log = make_log(ev);
  auto ranges = segment_stream(log, 2);
  REQUIRE(ranges.size() == 3);
  auto segs = partition_stream(log, 2, 0.8);
  for (const auto& s : segs) CHECK(s.range.size() >= 2);
  std::size_t total = 0;
  for (const auto& s : segs) total += s.range.size();
  CHECK(total == 4);
}
