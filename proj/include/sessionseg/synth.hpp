#pragma once

#include <cstdint>
#include <vector>

#include "sessionseg/corpus.hpp"

namespace sessionseg {

// Generator for a labeled corpus with planted topic boundaries. Topics come in
// sibling pairs that are co-browsed in the unlabeled log (so their behavior
// embeddings overlap) but have disjoint title vocabularies, brands and price
// bands. Annotated sessions switch topic at each gap with probability
// boundary_rate; the gap label is 1 exactly at those switches.
struct SynthConfig {
  std::size_t annotated_sessions = 2000;
  std::size_t unlabeled_sessions = 20000;
  int topics = 24;  // even
  int items_per_topic = 80;
  double boundary_rate = 0.11;
  double sibling_switch_rate = 0.5;   // share of switches that go to the sibling
  double sibling_mix_rate = 0.25;     // unlabeled: chance an item comes from the sibling
  std::size_t min_length = 3;
  double mean_length = 5.5;
  double cold_item_rate = 0.1;        // items absent from the unlabeled log
  double missing_price_rate = 0.05;
  double missing_brand_rate = 0.1;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SynthCorpus {
  Catalog catalog;
  std::vector<Session> sessions;  // unlabeled then annotated, ids unique
  std::vector<AnnotatedSession> annotated;
  std::vector<int> item_topic;    // by catalog insertion order
};

SynthCorpus generate_corpus(const SynthConfig& cfg);

}  // namespace sessionseg
