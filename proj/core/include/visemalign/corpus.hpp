#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "visemalign/numerics.hpp"

namespace visemalign {

using Tokens = std::vector<std::string>;
using WordIds = std::vector<std::size_t>;

enum class Split { kTrain, kVal, kTest };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);

// One image: region features (region 0 is the whole-image feature) and its
// tokenized captions.
struct ImageItem {
  std::string id;
  Split split = Split::kTrain;
  std::vector<Vec> regions;
  std::vector<Tokens> sentences;
};

struct DatasetManifest {
  std::size_t feature_dim = 0;
  std::vector<ImageItem> items;

  // Throws ContractError describing the first violated invariant.
  void validate() const;
  std::vector<const ImageItem*> items_in(Split s) const;
  const ImageItem* find(std::string_view id) const;
};

// Lowercases and splits on every character outside [a-z0-9].
Tokens tokenize(std::string_view text);

/// Word vocabulary. Regular words occupy indices [0, word_count()); the
/// START marker sits at word_count() and END at word_count() + 1. Neither
/// marker can be produced by tokenize().
class Vocabulary {
 public:
  static constexpr std::string_view kStartToken = "<START>";
  static constexpr std::string_view kEndToken = "<END>";

  Vocabulary() = default;
  // tokens/counts include the two trailing markers.
  Vocabulary(std::vector<std::string> tokens, std::vector<std::size_t> counts,
             std::size_t start_index, std::size_t end_index);

  std::size_t size() const { return tokens_.size(); }
  std::size_t word_count() const { return tokens_.size() - 2; }
  std::size_t start_index() const { return start_index_; }
  std::size_t end_index() const { return end_index_; }

  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  std::size_t count(std::size_t index) const { return counts_.at(index); }

  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::size_t>& counts() const { return counts_; }

  bool operator==(const Vocabulary& o) const {
    return tokens_ == o.tokens_ && counts_ == o.counts_ && start_index_ == o.start_index_ &&
           end_index_ == o.end_index_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::size_t start_index_ = 0;
  std::size_t end_index_ = 0;
};

/// Keeps tokens occurring at least min_count times, ordered by descending
/// count with alphabetical tie-break, then appends START and END. Marker
/// counts are set to the number of sentences.
Vocabulary build_vocabulary(const std::vector<Tokens>& train_sentences, std::size_t min_count);

enum class OovPolicy { kDrop, kError };

class OovError : public std::runtime_error {
 public:
  explicit OovError(std::string token)
      : std::runtime_error("out-of-vocabulary token: " + token), token_(std::move(token)) {}
  const std::string& token() const { return token_; }

 private:
  std::string token_;
};

WordIds encode_sentence(const Vocabulary& v, const Tokens& tokens, OovPolicy policy = OovPolicy::kDrop);

// Same as encode_sentence but also returns the surviving tokens.
struct EncodedTokens {
  WordIds ids;
  Tokens tokens;
};
EncodedTokens encode_with_tokens(const Vocabulary& v, const Tokens& tokens, OovPolicy policy);

// Ground truth for one concept word of a synthetic sentence.
struct ConceptPlacement {
  std::size_t image = 0;       // item index
  std::size_t sentence = 0;    // sentence index within the item
  std::size_t position = 0;    // token position within the sentence
  std::size_t region = 0;      // manifest region index (>= 1)
  std::string word;
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<ConceptPlacement> truth;
  std::vector<std::string> concept_words;
  std::vector<std::string> filler_words;
};

inline constexpr std::size_t kMaxSynthConcepts = 32;

/// Desk-scale fixture. Each image has n_regions object regions, each
/// carrying one distinct concept as a noisy one-hot feature, plus a
/// whole-image region 0 equal to the mean of the object features. The
/// caption names every concept, each preceded by an article and joined by
/// connectives, so the word-to-region truth is known by construction.
/// Concept sets are distinct across images.
SynthDataset synth_dataset(Rng& rng, std::size_t n_images, std::size_t n_regions,
                           std::size_t n_concepts, std::size_t feature_dim,
                           double noise = 0.05);

}  // namespace visemalign
