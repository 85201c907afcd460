#include "visemalign/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>
#include <unordered_map>

namespace visemalign {

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ContractError("unknown split '" + std::string(s) + "' (expected train|val|test)");
}

void DatasetManifest::validate() const {
  if (feature_dim == 0) throw ContractError("manifest: feature_dim must be positive");
  std::set<std::string, std::less<>> seen;
  for (const auto& item : items) {
    if (!seen.insert(item.id).second) throw ContractError("manifest: duplicate item id '" + item.id + "'");
    if (item.regions.empty()) throw ContractError("manifest: item '" + item.id + "' has no regions");
    if (item.sentences.empty()) throw ContractError("manifest: item '" + item.id + "' has no sentences");
    for (std::size_t r = 0; r < item.regions.size(); ++r) {
      if (item.regions[r].size() != feature_dim) {
        throw ContractError("manifest: item '" + item.id + "' region " + std::to_string(r) +
                            " has length " + std::to_string(item.regions[r].size()) +
                            ", expected " + std::to_string(feature_dim));
      }
      if (!all_finite(item.regions[r])) {
        throw ContractError("manifest: item '" + item.id + "' region " + std::to_string(r) +
                            " has non-finite entries");
      }
    }
    for (std::size_t s = 0; s < item.sentences.size(); ++s) {
      if (item.sentences[s].empty()) {
        throw ContractError("manifest: item '" + item.id + "' sentence " + std::to_string(s) + " is empty");
      }
    }
  }
}

std::vector<const ImageItem*> DatasetManifest::items_in(Split s) const {
  std::vector<const ImageItem*> out;
  for (const auto& item : items)
    if (item.split == s) out.push_back(&item);
  return out;
}

const ImageItem* DatasetManifest::find(std::string_view id) const {
  for (const auto& item : items)
    if (item.id == id) return &item;
  return nullptr;
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  for (char raw : text) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<std::size_t> counts,
                       std::size_t start_index, std::size_t end_index)
    : tokens_(std::move(tokens)), counts_(std::move(counts)), start_index_(start_index), end_index_(end_index) {
  if (tokens_.size() != counts_.size()) throw ContractError("vocabulary: tokens/counts length mismatch");
  if (tokens_.size() < 2) throw ContractError("vocabulary: missing START/END markers");
  if (start_index_ != tokens_.size() - 2 || end_index_ != tokens_.size() - 1) {
    throw ContractError("vocabulary: START/END must occupy the last two indices");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], i).second) {
      throw ContractError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

std::optional<std::size_t> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Vocabulary build_vocabulary(const std::vector<Tokens>& train_sentences, std::size_t min_count) {
  if (min_count < 1) throw ContractError("build_vocabulary: min_count must be >= 1");
  if (train_sentences.empty()) throw ContractError("build_vocabulary: empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& s : train_sentences)
    for (const auto& t : s) ++counts[t];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts)
    if (n >= min_count) kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::vector<std::string> tokens;
  std::vector<std::size_t> tcounts;
  for (auto& [tok, n] : kept) {
    tokens.push_back(tok);
    tcounts.push_back(n);
  }
  const std::size_t words = tokens.size();
  tokens.emplace_back(Vocabulary::kStartToken);
  tcounts.push_back(train_sentences.size());
  tokens.emplace_back(Vocabulary::kEndToken);
  tcounts.push_back(train_sentences.size());
  return Vocabulary(std::move(tokens), std::move(tcounts), words, words + 1);
}

EncodedTokens encode_with_tokens(const Vocabulary& v, const Tokens& tokens, OovPolicy policy) {
  EncodedTokens out;
  for (const auto& t : tokens) {
    auto idx = v.find(t);
    // The markers are not words; treat them as unknown.
    if (idx && *idx >= v.word_count()) idx.reset();
    if (!idx) {
      if (policy == OovPolicy::kError) throw OovError(t);
      continue;
    }
    out.ids.push_back(*idx);
    out.tokens.push_back(t);
  }
  return out;
}

WordIds encode_sentence(const Vocabulary& v, const Tokens& tokens, OovPolicy policy) {
  return encode_with_tokens(v, tokens, policy).ids;
}

namespace {

constexpr std::array<std::string_view, kMaxSynthConcepts> kConceptWords = {
    "dog",    "cat",     "ball",   "tree",   "car",    "bike",   "horse", "boat",
    "kite",   "guitar",  "table",  "pizza",  "hat",    "bench",  "train", "bird",
    "clock",  "umbrella","laptop", "surfboard", "helmet", "cake", "fence", "truck",
    "bottle", "flower",  "chair",  "window", "lamp",   "kayak",  "pumpkin", "accordion"};

constexpr std::array<std::string_view, 2> kArticles = {"a", "the"};
constexpr std::array<std::string_view, 3> kConnectives = {"and", "with", "near"};

std::size_t binomial_at_least(std::size_t n, std::size_t k, std::size_t cap) {
  // C(n, k) saturating at cap.
  if (k > n) return 0;
  double c = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
    if (c >= static_cast<double>(cap)) return cap;
  }
  return static_cast<std::size_t>(c + 0.5);
}

}  // namespace

SynthDataset synth_dataset(Rng& rng, std::size_t n_images, std::size_t n_regions,
                           std::size_t n_concepts, std::size_t feature_dim, double noise) {
  if (n_concepts == 0 || n_concepts > kConceptWords.size()) {
    throw ContractError("synth_dataset: n_concepts must be in [1, " +
                        std::to_string(kConceptWords.size()) + "]");
  }
  if (feature_dim < n_concepts) throw ContractError("synth_dataset: feature_dim must be >= n_concepts");
  if (n_regions == 0 || n_regions > n_concepts) {
    throw ContractError("synth_dataset: n_regions must be in [1, n_concepts]");
  }
  if (binomial_at_least(n_concepts, n_regions, n_images) < n_images) {
    throw ContractError("synth_dataset: not enough distinct concept sets for " +
                        std::to_string(n_images) + " images");
  }

  SynthDataset out;
  out.manifest.feature_dim = feature_dim;
  for (std::size_t c = 0; c < n_concepts; ++c) out.concept_words.emplace_back(kConceptWords[c]);
  for (auto a : kArticles) out.filler_words.emplace_back(a);
  for (auto c : kConnectives) out.filler_words.emplace_back(c);

  std::set<std::vector<std::size_t>> used_sets;
  for (std::size_t k = 0; k < n_images; ++k) {
    std::vector<std::size_t> chosen;
    for (;;) {
      std::vector<std::size_t> pool(n_concepts);
      for (std::size_t c = 0; c < n_concepts; ++c) pool[c] = c;
      rng.shuffle(pool);
      chosen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_regions));
      auto key = chosen;
      std::sort(key.begin(), key.end());
      if (used_sets.insert(key).second) break;
    }

    ImageItem item;
    item.id = "synth" + std::to_string(k);
    item.split = Split::kTrain;
    item.regions.assign(1, Vec(feature_dim, 0.0));
    for (std::size_t j = 0; j < n_regions; ++j) {
      Vec f(feature_dim);
      for (double& x : f) x = noise * rng.normal();
      f[chosen[j]] += 1.0;
      axpy(1.0 / static_cast<double>(n_regions), f, item.regions[0]);
      item.regions.push_back(std::move(f));
    }
    for (double& x : item.regions[0]) x += noise * rng.normal();

    // Mention order is independent of region order.
    std::vector<std::size_t> order(n_regions);
    for (std::size_t j = 0; j < n_regions; ++j) order[j] = j;
    rng.shuffle(order);
    Tokens sentence;
    for (std::size_t m = 0; m < n_regions; ++m) {
      if (m > 0) sentence.emplace_back(kConnectives[rng.uniform_index(kConnectives.size())]);
      sentence.emplace_back(kArticles[rng.uniform_index(kArticles.size())]);
      const std::size_t j = order[m];
      out.truth.push_back({k, 0, sentence.size(), j + 1, std::string(kConceptWords[chosen[j]])});
      sentence.emplace_back(kConceptWords[chosen[j]]);
    }
    item.sentences.push_back(std::move(sentence));
    out.manifest.items.push_back(std::move(item));
  }
  return out;
}

}  // namespace visemalign
