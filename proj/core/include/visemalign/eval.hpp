#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "visemalign/corpus.hpp"
#include "visemalign/numerics.hpp"

namespace visemalign {

// Image annotation: image queries rank sentences.
// Image search: sentence queries rank images.
enum class RankDirection { kAnnotation, kSearch };

struct RankingResult {
  RankDirection direction = RankDirection::kAnnotation;
  std::vector<std::size_t> ranks;          // 1-based, one per query
  std::map<std::size_t, double> recall;    // K -> percentage of queries with rank <= K
  double median_rank = 0.0;
};

struct RankReport {
  RankingResult annotation;
  RankingResult search;
};

using PairScoreFn = std::function<double(std::size_t image, std::size_t sentence)>;
using TruthPair = std::pair<std::size_t, std::size_t>;  // (image, sentence)

/// Candidates are sorted by descending score, ties by ascending candidate
/// index. A query's rank is the best rank among its ground-truth items.
/// Throws ContractError if a query has no ground truth or there are no
/// candidates.
RankReport rank_eval(const PairScoreFn& score, std::size_t n_images, std::size_t n_sentences,
                     std::span<const TruthPair> truth, std::span<const std::size_t> ks);
RankReport rank_eval(const Matrix& scores, std::span<const TruthPair> truth, std::span<const std::size_t> ks);

// Median of a nonempty list (mean of the two middle values for even sizes).
double median(std::vector<std::size_t> values);

/// Sentence-level BLEU-n in [0, 100] with uniform weights over orders 1..n
/// and brevity penalty min(1, exp(1 - r/c)), r = reference length closest
/// to c (ties to the shorter). Any zero precision gives 0. Throws
/// ContractError on an empty candidate or reference list.
double bleu(const Tokens& candidate, std::span<const Tokens> references, std::size_t n);

struct BleuExample {
  Tokens candidate;
  std::vector<Tokens> references;
};

/// Corpus-level BLEU-n: clipped counts and lengths are summed over all
/// examples before the geometric mean and brevity penalty.
double corpus_bleu(std::span<const BleuExample> examples, std::size_t n);

struct NoveltyResult {
  double rate = 0.0;
  std::optional<std::string> warning;
};

/// Fraction of generated captions that exactly equal some training caption.
/// An empty generated list yields 0 with a warning.
NoveltyResult novelty_rate(std::span<const Tokens> generated, std::span<const Tokens> training);

}  // namespace visemalign
