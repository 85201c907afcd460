#include "visemalign/mrf_decoder.hpp"

#include <algorithm>
#include <limits>

namespace visemalign {

void ScoreGrid::validate() const {
  if (unary.rows() == 0 || unary.cols() == 0) {
    throw ContractError("ScoreGrid: need at least one word and one region, got " + unary.shape_string());
  }
  if (!all_finite(unary.data())) throw ContractError("ScoreGrid: non-finite unary entries");
}

ScoreGrid ScoreGrid::from_encoded(const EncodedImage& img, const EncodedSentence& sent) {
  ScoreGrid g{Matrix(sent.words_out.size(), img.regions.size())};
  for (std::size_t j = 0; j < sent.words_out.size(); ++j)
    for (std::size_t i = 0; i < img.regions.size(); ++i) g.unary(j, i) = dot(img.regions[i], sent.words_out[j]);
  return g;
}

double path_objective(const ScoreGrid& grid, double beta, std::span<const std::size_t> path) {
  if (path.size() != grid.words()) throw ShapeError("path_objective: path length does not match grid");
  double acc = grid.unary(0, path[0]);
  for (std::size_t j = 1; j < path.size(); ++j) {
    acc = acc + (path[j] == path[j - 1] ? beta : 0.0);
    acc = acc + grid.unary(j, path[j]);
  }
  return acc;
}

AlignmentPath decode(const ScoreGrid& grid, double beta) {
  grid.validate();
  if (!(beta >= 0.0)) throw ContractError("decode: beta must be >= 0");
  const std::size_t n = grid.words();
  const std::size_t m = grid.regions();

  // best[j][i]: best objective of words j..n-1 given a_j = i.
  Matrix best(n, m);
  for (std::size_t i = 0; i < m; ++i) best(n - 1, i) = grid.unary(n - 1, i);
  for (std::size_t j = n - 1; j-- > 0;) {
    const auto next = best.row(j + 1);
    const double switch_best = *std::max_element(next.begin(), next.end());
    for (std::size_t i = 0; i < m; ++i) best(j, i) = grid.unary(j, i) + std::max(next[i] + beta, switch_best);
  }

  AlignmentPath path;
  path.assignments.resize(n);
  {
    const auto first = best.row(0);
    path.assignments[0] =
        static_cast<std::size_t>(std::max_element(first.begin(), first.end()) - first.begin());
  }
  for (std::size_t j = 1; j < n; ++j) {
    const std::size_t prev = path.assignments[j - 1];
    std::size_t arg = 0;
    double val = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      const double v = best(j, i) + (i == prev ? beta : 0.0);
      if (v > val) {
        val = v;
        arg = i;
      }
    }
    path.assignments[j] = arg;
  }
  path.objective = path_objective(grid, beta, path.assignments);
  return path;
}

AlignmentPath decode_bruteforce(const ScoreGrid& grid, double beta) {
  grid.validate();
  const std::size_t n = grid.words();
  const std::size_t m = grid.regions();
  std::size_t total = 1;
  for (std::size_t j = 0; j < n; ++j) {
    if (total > kBruteForceLimit / m) {
      throw ContractError("decode_bruteforce: instance too large (regions^words > 1e6)");
    }
    total *= m;
  }

  std::vector<std::size_t> cur(n, 0);
  AlignmentPath best{cur, path_objective(grid, beta, cur)};
  // Odometer over assignments in lexicographic order; only strict
  // improvements replace the incumbent.
  for (std::size_t step = 1; step < total; ++step) {
    for (std::size_t j = n; j-- > 0;) {
      if (++cur[j] < m) break;
      cur[j] = 0;
    }
    const double obj = path_objective(grid, beta, cur);
    if (obj > best.objective) {
      best.objective = obj;
      best.assignments = cur;
    }
  }
  return best;
}

std::vector<Segment> segments(std::span<const std::size_t> a) {
  std::vector<Segment> out;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (!out.empty() && out.back().region == a[j]) {
      out.back().end = j;
    } else {
      out.push_back({j, j, a[j]});
    }
  }
  return out;
}

std::vector<Segment> segments(const AlignmentPath& path) { return segments(path.assignments); }

BetaSelection select_beta(std::span<const LabelledGrid> fixture, std::span<const double> candidates) {
  if (candidates.empty()) throw ContractError("select_beta: no candidate betas");
  BetaSelection sel;
  sel.accuracy = -1.0;
  for (double beta : candidates) {
    std::size_t hit = 0;
    std::size_t labelled = 0;
    for (const auto& lg : fixture) {
      const auto path = decode(lg.grid, beta);
      for (std::size_t j = 0; j < lg.truth.size() && j < path.assignments.size(); ++j) {
        if (lg.truth[j] == LabelledGrid::kUnlabelled) continue;
        ++labelled;
        if (path.assignments[j] == lg.truth[j]) ++hit;
      }
    }
    const double acc = labelled == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(labelled);
    sel.accuracy_per_beta.push_back(acc);
    if (acc > sel.accuracy || (acc == sel.accuracy && beta > sel.beta)) {
      sel.accuracy = acc;
      sel.beta = beta;
    }
  }
  return sel;
}

}  // namespace visemalign
