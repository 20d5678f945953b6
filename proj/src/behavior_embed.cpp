#include "sessionseg/behavior_embed.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "sessionseg/common.hpp"

namespace sessionseg {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'E', 'M', 'B', 'T', 'B', 'L'};
constexpr std::uint32_t kTableVersion = 1;

struct Vocab {
  std::vector<std::string> words;
  std::vector<std::uint64_t> counts;
  std::unordered_map<std::string_view, std::uint32_t> index;
};

// Frequency-descending order; ties broken by id so the layout is stable.
Vocab build_vocab(const std::vector<const Session*>& sessions, int min_count) {
  std::unordered_map<std::string_view, std::uint64_t> counts;
  for (const Session* s : sessions) {
    for (const auto& id : s->items) ++counts[id];
  }
  std::vector<std::pair<std::string_view, std::uint64_t>> entries;
  for (const auto& [id, c] : counts) {
    if (c >= static_cast<std::uint64_t>(min_count)) entries.emplace_back(id, c);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocab v;
  for (const auto& [id, c] : entries) {
    v.index.emplace(id, static_cast<std::uint32_t>(v.words.size()));
    v.words.emplace_back(id);
    v.counts.push_back(c);
  }
  return v;
}

class NoiseSampler {
 public:
  NoiseSampler(const std::vector<std::uint64_t>& counts, double exponent) {
    cumulative_.reserve(counts.size());
    double total = 0;
    for (auto c : counts) {
      total += std::pow(static_cast<double>(c), exponent);
      cumulative_.push_back(total);
    }
  }
  std::uint32_t sample(Rng& rng) const {
    const double r = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), r);
    if (it == cumulative_.end()) --it;
    return static_cast<std::uint32_t>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
};

struct Model {
  std::size_t dim;
  std::vector<float> input;   // vocab x dim
  std::vector<float> output;  // vocab x dim

  std::span<float> in(std::uint32_t w) { return {input.data() + w * dim, dim}; }
  std::span<float> out(std::uint32_t w) {
    return {output.data() + w * dim, dim};
  }
};

struct Shard {
  double loss = 0;
  std::uint64_t pairs = 0;
};

// Trains one epoch over `sentences[begin, end)`, given the global token
// offset used for learning-rate decay.
Shard train_range(Model& model, const SgnsConfig& cfg,
                  const std::vector<std::vector<std::uint32_t>>& sentences,
                  std::size_t begin, std::size_t end,
                  const std::vector<double>& keep_prob,
                  const NoiseSampler& noise, Rng& rng,
                  std::uint64_t tokens_before, std::uint64_t total_tokens) {
  Shard shard;
  std::vector<float> scratch(model.dim);
  std::vector<std::span<float>> outputs(1 + cfg.negative);
  std::vector<std::uint32_t> kept;
  std::uint64_t processed = tokens_before;
  for (std::size_t s = begin; s < end; ++s) {
    const auto& sentence = sentences[s];
    kept.clear();
    for (auto w : sentence) {
      if (keep_prob[w] >= 1.0 || rng.uniform() < keep_prob[w]) kept.push_back(w);
    }
    const double progress =
        static_cast<double>(processed) / static_cast<double>(total_tokens);
    const double lr = std::max(
        cfg.min_alpha, cfg.alpha - (cfg.alpha - cfg.min_alpha) * progress);
    processed += sentence.size();
    const auto n = static_cast<std::ptrdiff_t>(kept.size());
    for (std::ptrdiff_t pos = 0; pos < n; ++pos) {
      const std::uint32_t target = kept[pos];
      const auto reduced = static_cast<std::ptrdiff_t>(rng.below(cfg.window));
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, pos - cfg.window + reduced);
      const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, pos + cfg.window + 1 - reduced);
      for (std::ptrdiff_t p2 = lo; p2 < hi; ++p2) {
        if (p2 == pos) continue;
        outputs[0] = model.out(target);
        std::size_t used = 1;
        for (int k = 0; k < cfg.negative; ++k) {
          const std::uint32_t neg = noise.sample(rng);
          if (neg == target) continue;
          outputs[used++] = model.out(neg);
        }
        shard.loss += sgns::update<float>(
            model.in(kept[p2]),
            std::span<const std::span<float>>(outputs.data(), used), lr,
            scratch);
        ++shard.pairs;
      }
    }
  }
  return shard;
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw ValidationError("embedding table is truncated");
    }
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

void SgnsConfig::validate() const {
  if (vector_size < 1) throw ValidationError("vector_size must be >= 1");
  if (window < 1) throw ValidationError("window must be >= 1");
  if (negative < 0) throw ValidationError("negative must be >= 0");
  if (epochs < 1) throw ValidationError("epochs must be >= 1");
  if (min_count < 1) throw ValidationError("min_count must be >= 1");
  if (sample < 0) throw ValidationError("sample must be >= 0");
  if (!(alpha > 0) || min_alpha < 0) {
    throw ValidationError("learning rates must be positive");
  }
  if (workers < 1) throw ValidationError("workers must be >= 1");
}

EmbeddingTable::EmbeddingTable(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw ValidationError("embedding dim must be >= 1");
}

void EmbeddingTable::add(std::string id, std::span<const float> vector) {
  if (vector.size() != dim_) {
    throw ValidationError("vector for " + id + " has length " +
                          std::to_string(vector.size()) + ", expected " +
                          std::to_string(dim_));
  }
  for (float v : vector) {
    if (!std::isfinite(v)) throw ValidationError("non-finite vector for " + id);
  }
  if (index_.count(id)) throw ValidationError("duplicate embedding id " + id);
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  data_.insert(data_.end(), vector.begin(), vector.end());
}

std::optional<std::span<const float>> EmbeddingTable::lookup(
    std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return std::span<const float>(data_.data() + it->second * dim_, dim_);
}

bool EmbeddingTable::contains(std::string_view id) const {
  return index_.count(std::string(id)) != 0;
}

bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
  if (a.dim_ != b.dim_ || a.ids_ != b.ids_) return false;
  if (a.data_.size() != b.data_.size()) return false;
  for (std::size_t i = 0; i < a.data_.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.data_[i]) !=
        std::bit_cast<std::uint32_t>(b.data_[i])) {
      return false;
    }
  }
  return true;
}

std::optional<std::span<const float>> lookup(const EmbeddingTable& table,
                                             std::string_view item_id) {
  return table.lookup(item_id);
}

namespace sgns {

template <typename Real>
double update(std::span<Real> input, std::span<const std::span<Real>> outputs,
              double lr, std::span<Real> scratch) {
  const std::size_t dim = input.size();
  std::fill(scratch.begin(), scratch.end(), Real(0));
  double loss = 0;
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    auto out = outputs[k];
    double dot = 0;
    for (std::size_t i = 0; i < dim; ++i) dot += double(input[i]) * double(out[i]);
    const double label = k == 0 ? 1.0 : 0.0;
    const double p = sigmoid(dot);
    // -log s(dot) for the target, -log s(-dot) for noise samples.
    const double z = k == 0 ? -dot : dot;
    loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
    const double g = p - label;
    for (std::size_t i = 0; i < dim; ++i) {
      scratch[i] += static_cast<Real>(g * out[i]);
      out[i] -= static_cast<Real>(lr * g * input[i]);
    }
  }
  for (std::size_t i = 0; i < dim; ++i) input[i] -= static_cast<Real>(lr * scratch[i]);
  return loss;
}

template double update<float>(std::span<float>, std::span<const std::span<float>>,
                              double, std::span<float>);
template double update<double>(std::span<double>,
                               std::span<const std::span<double>>, double,
                               std::span<double>);

}  // namespace sgns

EmbeddingTable train_behavior_embeddings(
    std::span<const Session> sessions, const SgnsConfig& config,
    const std::unordered_set<std::string>& exclude, SgnsReport* report) {
  config.validate();
  std::vector<const Session*> kept;
  std::size_t excluded = 0;
  for (const auto& s : sessions) {
    if (exclude.count(s.session_id)) {
      ++excluded;
    } else if (!s.items.empty()) {
      kept.push_back(&s);
    }
  }
  if (kept.empty()) {
    throw ValidationError("no sessions left for embedding training");
  }
  const Vocab vocab = build_vocab(kept, config.min_count);
  if (vocab.words.empty()) {
    throw ValidationError("no item meets min_count");
  }

  std::vector<std::vector<std::uint32_t>> sentences;
  sentences.reserve(kept.size());
  std::uint64_t total_words = 0;
  for (const Session* s : kept) {
    std::vector<std::uint32_t> ids;
    for (const auto& item : s->items) {
      auto it = vocab.index.find(item);
      if (it != vocab.index.end()) ids.push_back(it->second);
    }
    total_words += ids.size();
    sentences.push_back(std::move(ids));
  }

  std::vector<double> keep_prob(vocab.words.size(), 1.0);
  if (config.sample > 0) {
    const double threshold = config.sample * static_cast<double>(total_words);
    for (std::size_t w = 0; w < keep_prob.size(); ++w) {
      const double c = static_cast<double>(vocab.counts[w]);
      keep_prob[w] = std::min(1.0, (std::sqrt(c / threshold) + 1.0) * threshold / c);
    }
  }

  const auto dim = static_cast<std::size_t>(config.vector_size);
  Model model{dim, std::vector<float>(vocab.words.size() * dim),
              std::vector<float>(vocab.words.size() * dim, 0.0f)};
  Rng init_rng(derive_seed(config.seed, 0));
  for (auto& v : model.input) {
    v = static_cast<float>((init_rng.uniform() - 0.5) / static_cast<double>(dim));
  }
  const NoiseSampler noise(vocab.counts, config.ns_exponent);
  const std::uint64_t total_tokens = total_words * config.epochs;

  SgnsReport local;
  local.training_sessions = kept.size();
  local.excluded_sessions = excluded;
  local.vocabulary = vocab.words.size();
  local.tokens = total_words;

  const std::size_t workers =
      std::min<std::size_t>(config.workers, sentences.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::uint64_t epoch_offset = total_words * epoch;
    std::vector<Shard> shards(workers);
    if (workers == 1) {
      Rng rng(derive_seed(config.seed, 1 + epoch));
      shards[0] = train_range(model, config, sentences, 0, sentences.size(),
                              keep_prob, noise, rng, epoch_offset, total_tokens);
    } else {
      std::vector<std::thread> threads;
      const std::size_t chunk = (sentences.size() + workers - 1) / workers;
      for (std::size_t t = 0; t < workers; ++t) {
        threads.emplace_back([&, t] {
          const std::size_t begin = std::min(sentences.size(), t * chunk);
          const std::size_t end = std::min(sentences.size(), begin + chunk);
          Rng rng(derive_seed(config.seed, 1 + epoch * workers + t));
          // Each shard decays the rate as if it had the whole epoch.
          shards[t] = train_range(model, config, sentences, begin, end,
                                  keep_prob, noise, rng,
                                  epoch_offset, total_tokens);
        });
      }
      for (auto& th : threads) th.join();
    }
    double loss = 0;
    std::uint64_t pairs = 0;
    for (const auto& s : shards) {
      loss += s.loss;
      pairs += s.pairs;
    }
    local.epoch_loss.push_back(pairs ? loss / static_cast<double>(pairs) : 0.0);
  }

  EmbeddingTable table(dim);
  for (std::size_t w = 0; w < vocab.words.size(); ++w) {
    table.add(vocab.words[w], model.in(static_cast<std::uint32_t>(w)));
  }
  if (report) *report = std::move(local);
  return table;
}

void save_table(const EmbeddingTable& table, std::ostream& out) {
  std::string buf(kMagic, sizeof(kMagic));
  put_u32(buf, kTableVersion);
  put_u32(buf, static_cast<std::uint32_t>(table.dim()));
  put_u64(buf, table.size());
  for (const auto& id : table.ids()) {
    put_u32(buf, static_cast<std::uint32_t>(id.size()));
    buf += id;
    const auto vec = *table.lookup(id);
    put_u32(buf, static_cast<std::uint32_t>(vec.size()));
    for (float v : vec) put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  put_u64(buf, fnv1a64(buf));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing embedding table");
}

EmbeddingTable load_table(std::istream& in) {
  const std::string data((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  ByteReader r(data);
  if (r.bytes(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
    throw ValidationError("not an embedding table file");
  }
  const auto version = r.u32();
  if (version != kTableVersion) {
    throw ValidationError("unsupported embedding table version " +
                          std::to_string(version));
  }
  const auto dim = r.u32();
  const auto count = r.u64();
  EmbeddingTable table(dim);
  std::vector<float> vec(dim);
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = r.u32();
    std::string id(r.bytes(len));
    const auto vlen = r.u32();
    if (vlen != dim) {
      throw ValidationError("entry " + id + " has " + std::to_string(vlen) +
                            " values but the header dim is " +
                            std::to_string(dim));
    }
    for (auto& v : vec) v = std::bit_cast<float>(r.u32());
    table.add(std::move(id), vec);
  }
  const std::size_t payload = r.pos();
  const auto checksum = r.u64();
  if (checksum != fnv1a64(std::string_view(data).substr(0, payload))) {
    throw ValidationError("embedding table checksum mismatch");
  }
  if (r.remaining() != 0) {
    throw ValidationError("trailing bytes after embedding table");
  }
  return table;
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  save_table(table, out);
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_table(in);
}

}  // namespace sessionseg
