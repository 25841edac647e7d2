#pragma once

// Seeded synthetic interaction streams for desk-scale experiments.
//
// Users and items arrive progressively over the timeline. Activity and
// popularity follow Zipf-like weights, and item choice is tilted by a hidden
// low-rank affinity so that a collaborative model has something to learn.

#include <cstdint>
#include <string>

#include "embudget/stream_corpus.hpp"

namespace embudget {

struct SyntheticSpec {
  std::int32_t users = 600;
  std::int32_t items = 400;
  std::int64_t events = 20000;
  int latent_dim = 8;
  double user_skew = 0.8;  // Zipf exponent for user activity
  double item_skew = 0.8;  // Zipf exponent for item popularity
  double affinity = 3.0;   // strength of the low-rank preference term
  // Fraction of each entity kind present from the start; the rest arrive
  // uniformly over the first `arrival_span` of the timeline.
  double initial_share = 0.3;
  double arrival_span = 0.8;
  std::uint64_t seed = 0;
};

// "user,item,timestamp" text with a header row.
std::string synthesize_csv(const SyntheticSpec& spec);

// The same stream parsed into a log.
InteractionLog synthesize_log(const SyntheticSpec& spec);

}  // namespace embudget
