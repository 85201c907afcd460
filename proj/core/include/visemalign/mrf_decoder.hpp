#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "visemalign/alignment_model.hpp"
#include "visemalign/numerics.hpp"

namespace visemalign {

/// Word-by-region compatibility table: unary(j, i) = v_i . s_j.
struct ScoreGrid {
  Matrix unary;  // words x regions

  std::size_t words() const { return unary.rows(); }
  std::size_t regions() const { return unary.cols(); }
  void validate() const;

  static ScoreGrid from_encoded(const EncodedImage& img, const EncodedSentence& sent);
};

/// One region index per word (0-based) and the chain objective of that
/// assignment.
struct AlignmentPath {
  std::vector<std::size_t> assignments;
  double objective = 0.0;
};

struct Segment {
  std::size_t start = 0;  // first word, inclusive
  std::size_t end = 0;    // last word, inclusive
  std::size_t region = 0;

  bool operator==(const Segment&) const = default;
};

/// sum_j unary(j, a_j) + beta * #{j : a_j == a_{j+1}}, accumulated left to
/// right so every caller sees bit-identical values for the same path.
double path_objective(const ScoreGrid& grid, double beta, std::span<const std::size_t> path);

/// Exact maximizer of the chain objective in O(words * regions). Among
/// optimal paths the lexicographically smallest one is returned: the first
/// word takes the lowest optimal region and each later word the lowest
/// region consistent with an optimum (which is the previous word's region
/// whenever staying put is optimal and no lower region ties).
AlignmentPath decode(const ScoreGrid& grid, double beta);

inline constexpr std::size_t kBruteForceLimit = 1'000'000;

/// Exhaustive search over all regions^words assignments with the same tie
/// rule as decode(). Throws ContractError when regions^words exceeds
/// kBruteForceLimit.
AlignmentPath decode_bruteforce(const ScoreGrid& grid, double beta);

/// Maximal runs of equal consecutive assignments, in order.
std::vector<Segment> segments(const AlignmentPath& path);
std::vector<Segment> segments(std::span<const std::size_t> assignments);

/// Ground-truth labelled grid used for choosing beta. truth[j] is the
/// expected region of word j, or kUnlabelled.
struct LabelledGrid {
  static constexpr std::size_t kUnlabelled = static_cast<std::size_t>(-1);
  ScoreGrid grid;
  std::vector<std::size_t> truth;
};

struct BetaSelection {
  double beta = 0.0;
  double accuracy = 0.0;  // fraction of labelled words decoded correctly
  std::vector<double> accuracy_per_beta;
};

/// Picks the candidate with the best labelled-word accuracy; ties go to the
/// larger beta (longer segments at no cost in accuracy).
BetaSelection select_beta(std::span<const LabelledGrid> fixture, std::span<const double> candidates);

}  // namespace visemalign
