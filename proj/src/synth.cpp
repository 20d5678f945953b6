#include "sessionseg/synth.hpp"

#include <cmath>
#include <string>

#include "sessionseg/common.hpp"

namespace sessionseg {

void SynthConfig::validate() const {
  const auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (annotated_sessions < 2) throw ValidationError("need at least 2 annotated sessions");
  if (topics < 2 || topics % 2 != 0) throw ValidationError("topics must be even and >= 2");
  if (items_per_topic < 1) throw ValidationError("items_per_topic must be >= 1");
  if (!rate(boundary_rate) || !rate(sibling_switch_rate) || !rate(sibling_mix_rate) ||
      !rate(missing_price_rate) || !rate(missing_brand_rate)) {
    throw ValidationError("rates must lie in [0, 1]");
  }
  if (!(cold_item_rate >= 0.0 && cold_item_rate < 1.0)) {
    throw ValidationError("cold_item_rate must lie in [0, 1)");
  }
  if (min_length < 2) throw ValidationError("min_length must be >= 2");
  if (!(mean_length >= static_cast<double>(min_length))) {
    throw ValidationError("mean_length must be >= min_length");
  }
}

namespace {

constexpr const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p",
                                   "r", "s", "t", "v", "z", "ch", "sh", "tr", "pl"};
constexpr const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};

std::string make_word(Rng& rng, int syllables) {
  std::string w;
  for (int i = 0; i < syllables; ++i) {
    w += kOnsets[rng.below(std::size(kOnsets))];
    w += kVowels[rng.below(std::size(kVowels))];
  }
  if (rng.uniform() < 0.5) w += kOnsets[rng.below(std::size(kOnsets))];
  return w;
}

std::size_t poisson(Rng& rng, double mean) {
  const double limit = std::exp(-mean);
  double p = rng.uniform();
  std::size_t k = 0;
  while (p > limit) {
    ++k;
    p *= rng.uniform();
  }
  return k;
}

struct Topic {
  std::vector<std::string> words;
  std::vector<std::string> brands;
  double price_center = 0;
  std::vector<std::size_t> items;       // catalog indices
  std::vector<std::size_t> warm_items;  // appear in the unlabeled log
};

}  // namespace

SynthCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthCorpus out;
  std::vector<Topic> topics(cfg.topics);
  std::vector<std::string> ids;

  const std::vector<std::string> generic = {"new", "pack", "set", "mini", "pro",
                                            "classic", "2x", "xl"};
  std::size_t next_id = 0;
  for (int t = 0; t < cfg.topics; ++t) {
    auto& topic = topics[t];
    for (int i = 0; i < 10; ++i) topic.words.push_back(make_word(rng, 2 + rng.below(2)));
    for (int i = 0; i < 4; ++i) topic.brands.push_back(make_word(rng, 2));
    topic.price_center = std::exp(std::log(5.0) + rng.uniform() * std::log(400.0));
    for (int k = 0; k < cfg.items_per_topic; ++k) {
      Item item;
      item.id = "P" + std::to_string(100000 + next_id * 7919 % 900000);
      ++next_id;
      const std::size_t n_words = 3 + rng.below(3);
      for (std::size_t w = 0; w < n_words; ++w) {
        if (!item.title.empty()) item.title += ' ';
        item.title += rng.uniform() < 0.15 ? generic[rng.below(generic.size())]
                                           : topic.words[rng.below(topic.words.size())];
      }
      if (rng.uniform() >= cfg.missing_brand_rate) {
        item.brand = topic.brands[rng.below(topic.brands.size())];
      }
      if (rng.uniform() >= cfg.missing_price_rate) {
        const double p = topic.price_center * std::exp(0.25 * rng.normal());
        item.price = std::round(p * 100.0) / 100.0;
      }
      const std::size_t index = out.item_topic.size();
      topic.items.push_back(index);
      if (rng.uniform() >= cfg.cold_item_rate) topic.warm_items.push_back(index);
      out.item_topic.push_back(t);
      ids.push_back(item.id);
      out.catalog.add(std::move(item));
    }
    if (topic.warm_items.empty()) topic.warm_items.push_back(topic.items.front());
  }

  const auto sibling = [](int t) { return t ^ 1; };
  const auto draw_length = [&] {
    return cfg.min_length + poisson(rng, cfg.mean_length - static_cast<double>(cfg.min_length));
  };
  const auto other_topic = [&](int t) {
    if (rng.uniform() < cfg.sibling_switch_rate) return sibling(t);
    int u = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.topics - 1)));
    return u >= t ? u + 1 : u;
  };

  for (std::size_t s = 0; s < cfg.unlabeled_sessions; ++s) {
    Session session;
    session.session_id = "u" + std::to_string(s);
    const std::size_t len = draw_length();
    int topic = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.topics)));
    for (std::size_t i = 0; i < len; ++i) {
      if (i > 0 && rng.uniform() < cfg.boundary_rate) topic = other_topic(topic);
      const int source = rng.uniform() < cfg.sibling_mix_rate ? sibling(topic) : topic;
      const auto& pool = topics[source].warm_items;
      session.items.push_back(ids[pool[rng.below(pool.size())]]);
    }
    out.sessions.push_back(std::move(session));
  }

  for (std::size_t s = 0; s < cfg.annotated_sessions; ++s) {
    AnnotatedSession a;
    a.session.session_id = "a" + std::to_string(s);
    a.annotator_id = "synth";
    const std::size_t len = draw_length();
    int topic = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.topics)));
    for (std::size_t i = 0; i < len; ++i) {
      if (i > 0) {
        const bool change = rng.uniform() < cfg.boundary_rate;
        if (change) topic = other_topic(topic);
        a.gap_labels.push_back(change ? 1 : 0);
      }
      const auto& pool = topics[topic].items;
      a.session.items.push_back(ids[pool[rng.below(pool.size())]]);
    }
    out.sessions.push_back(a.session);
    out.annotated.push_back(std::move(a));
  }
  return out;
}

}  // namespace sessionseg
