#include "visemalign/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace visemalign {

double median(std::vector<std::size_t> values) {
  if (values.empty()) throw ContractError("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return static_cast<double>(values[n / 2]);
  return 0.5 * (static_cast<double>(values[n / 2 - 1]) + static_cast<double>(values[n / 2]));
}

namespace {

// rank of `target` among candidates 0..n-1 under descending score with
// ascending-index tie break.
std::size_t rank_of(std::size_t target, std::size_t n, const std::function<double(std::size_t)>& s) {
  const double ts = s(target);
  std::size_t ahead = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (c == target) continue;
    const double cs = s(c);
    if (cs > ts || (cs == ts && c < target)) ++ahead;
  }
  return ahead + 1;
}

RankingResult rank_direction(RankDirection dir, std::size_t n_queries, std::size_t n_candidates,
                             const std::vector<std::vector<std::size_t>>& truth_of,
                             const std::function<double(std::size_t, std::size_t)>& s,
                             std::span<const std::size_t> ks) {
  if (n_candidates == 0) throw ContractError("rank_eval: empty candidate set");
  RankingResult r;
  r.direction = dir;
  for (std::size_t q = 0; q < n_queries; ++q) {
    if (truth_of[q].empty()) {
      throw ContractError(std::string("rank_eval: ") + (dir == RankDirection::kAnnotation ? "image " : "sentence ") +
                          std::to_string(q) + " has no ground-truth match");
    }
    auto by_candidate = [&](std::size_t c) { return s(q, c); };
    std::size_t best = n_candidates + 1;
    for (auto t : truth_of[q]) best = std::min(best, rank_of(t, n_candidates, by_candidate));
    r.ranks.push_back(best);
  }
  for (auto k : ks) {
    std::size_t hits = 0;
    for (auto rk : r.ranks)
      if (rk <= k) ++hits;
    r.recall[k] = r.ranks.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(r.ranks.size());
  }
  r.median_rank = r.ranks.empty() ? 0.0 : median(r.ranks);
  return r;
}

}  // namespace

RankReport rank_eval(const PairScoreFn& score, std::size_t n_images, std::size_t n_sentences,
                     std::span<const TruthPair> truth, std::span<const std::size_t> ks) {
  std::vector<std::vector<std::size_t>> sentences_of(n_images);
  std::vector<std::vector<std::size_t>> images_of(n_sentences);
  for (const auto& [img, sent] : truth) {
    if (img >= n_images || sent >= n_sentences) throw ContractError("rank_eval: truth pair out of range");
    sentences_of[img].push_back(sent);
    images_of[sent].push_back(img);
  }
  RankReport rep;
  rep.annotation = rank_direction(RankDirection::kAnnotation, n_images, n_sentences, sentences_of,
                                  [&](std::size_t q, std::size_t c) { return score(q, c); }, ks);
  rep.search = rank_direction(RankDirection::kSearch, n_sentences, n_images, images_of,
                              [&](std::size_t q, std::size_t c) { return score(c, q); }, ks);
  return rep;
}

RankReport rank_eval(const Matrix& scores, std::span<const TruthPair> truth, std::span<const std::size_t> ks) {
  return rank_eval([&](std::size_t i, std::size_t s) { return scores(i, s); }, scores.rows(), scores.cols(),
                   truth, ks);
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const Tokens& toks, std::size_t order) {
  NgramCounts out;
  if (toks.size() < order) return out;
  for (std::size_t i = 0; i + order <= toks.size(); ++i) {
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + order))];
  }
  return out;
}

struct BleuStats {
  std::vector<std::size_t> matched;
  std::vector<std::size_t> total;
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
};

void accumulate(BleuStats& st, const Tokens& cand, std::span<const Tokens> refs, std::size_t n) {
  if (cand.empty()) throw ContractError("bleu: empty candidate");
  if (refs.empty()) throw ContractError("bleu: no references");
  if (n < 1 || n > 4) throw ContractError("bleu: order must be in 1..4");
  for (std::size_t order = 1; order <= n; ++order) {
    const auto cc = ngrams(cand, order);
    std::map<std::vector<std::string>, std::size_t> max_ref;
    for (const auto& ref : refs)
      for (const auto& [g, c] : ngrams(ref, order)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : cc) {
      auto it = max_ref.find(g);
      st.matched[order - 1] += std::min(c, it == max_ref.end() ? std::size_t{0} : it->second);
      st.total[order - 1] += c;
    }
  }
  const std::size_t c = cand.size();
  std::size_t best = refs[0].size();
  for (const auto& ref : refs) {
    const auto d = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
  }
  st.cand_len += c;
  st.ref_len += best;
}

double finish(const BleuStats& st, std::size_t n) {
  double log_sum = 0.0;
  for (std::size_t o = 0; o < n; ++o) {
    if (st.total[o] == 0 || st.matched[o] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(st.matched[o]) / static_cast<double>(st.total[o]));
  }
  const double c = static_cast<double>(st.cand_len);
  const double r = static_cast<double>(st.ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(n));
}

}  // namespace

double bleu(const Tokens& candidate, std::span<const Tokens> references, std::size_t n) {
  BleuStats st{std::vector<std::size_t>(n, 0), std::vector<std::size_t>(n, 0)};
  accumulate(st, candidate, references, n);
  return finish(st, n);
}

double corpus_bleu(std::span<const BleuExample> examples, std::size_t n) {
  if (examples.empty()) throw ContractError("corpus_bleu: no examples");
  BleuStats st{std::vector<std::size_t>(n, 0), std::vector<std::size_t>(n, 0)};
  for (const auto& ex : examples) accumulate(st, ex.candidate, ex.references, n);
  return finish(st, n);
}

NoveltyResult novelty_rate(std::span<const Tokens> generated, std::span<const Tokens> training) {
  NoveltyResult r;
  if (generated.empty()) {
    r.warning = "novelty_rate: no generated captions; reporting 0";
    return r;
  }
  std::set<Tokens> seen(training.begin(), training.end());
  std::size_t copies = 0;
  for (const auto& g : generated)
    if (seen.contains(g)) ++copies;
  r.rate = static_cast<double>(copies) / static_cast<double>(generated.size());
  return r;
}

}  // namespace visemalign
