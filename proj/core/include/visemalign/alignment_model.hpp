#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "visemalign/corpus.hpp"
#include "visemalign/numerics.hpp"
#include "visemalign/param_blocks.hpp"

namespace visemalign {

// How word/region dot products are reduced to an image-sentence score.
//  kMax: sum over words of the best region's raw dot product.
//  kSum: sum over all (word, region) of max(0, dot) (fragment-style variant).
enum class ScoreVariant { kMax, kSum };

std::string_view to_string(ScoreVariant v);
ScoreVariant parse_score_variant(std::string_view s);

struct AlignmentLossConfig {
  double margin = 1.0;
  ScoreVariant score = ScoreVariant::kMax;
  // Inverted-dropout rate applied to word vectors and region features
  // during training only.
  double dropout = 0.5;
};

struct AlignmentHyper {
  std::size_t feature_dim = 0;   // region feature length
  std::size_t vocab_size = 0;    // regular words (no START/END)
  std::size_t embed_dim = 16;    // joint embedding size
  std::size_t hidden_dim = 16;   // BRNN hidden size
  std::size_t word_dim = 32;     // word vector size
  AlignmentLossConfig loss;

  // Throws ContractError on zero dims or invalid rates.
  void validate() const;
};

/// All trainable tensors of the embedding model. Also used as the gradient
/// container (same shapes).
struct AlignmentParams {
  Matrix region_weight;   // embed x feature
  Matrix region_bias;     // embed x 1
  Matrix word_vectors;    // word_dim x vocab, one column per word
  Matrix input_weight;    // hidden x word_dim
  Matrix input_bias;      // hidden x 1
  Matrix fwd_weight;      // hidden x hidden, left-to-right stream
  Matrix fwd_bias;
  Matrix bwd_weight;      // hidden x hidden, right-to-left stream
  Matrix bwd_bias;
  Matrix out_weight;      // embed x hidden
  Matrix out_bias;        // embed x 1

  static AlignmentParams zeros(const AlignmentHyper& hyper);

  /// Weights drawn uniformly from [-r, r] with r = sqrt(3 / fan_in) (unit
  /// variance per pre-activation for unit-variance inputs); word vectors use
  /// r = 0.5; biases start at 0.
  static AlignmentParams init(const AlignmentHyper& hyper, Rng& rng);

  ParamBlocks blocks();
  ParamBlocks blocks() const { return const_cast<AlignmentParams*>(this)->blocks(); }

  std::size_t feature_dim() const { return region_weight.cols(); }
  std::size_t vocab_size() const { return word_vectors.cols(); }
  std::size_t embed_dim() const { return region_weight.rows(); }
};

struct EncodedImage {
  std::vector<Vec> inputs;   // features after dropout
  std::vector<Vec> regions;  // projected region vectors
};

struct EncodedSentence {
  WordIds words;
  std::vector<Vec> dropout_masks;  // empty when dropout is off
  std::vector<Vec> x, input_pre, input_act;
  std::vector<Vec> fwd_pre, fwd;
  std::vector<Vec> bwd_pre, bwd;
  std::vector<Vec> out_pre;
  std::vector<Vec> words_out;  // final word vectors in the joint space
};

// Optional training-time dropout source; nullptr or rate 0 disables it.
struct DropoutSource {
  Rng* rng = nullptr;
  double rate = 0.0;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

EncodedImage embed_image(const AlignmentParams& p, std::span<const Vec> features,
                         DropoutSource dropout = {});

EncodedSentence embed_sentence(const AlignmentParams& p, const WordIds& words,
                               DropoutSource dropout = {});

double score_max(const EncodedImage& img, const EncodedSentence& sent);
double score_sum(const EncodedImage& img, const EncodedSentence& sent);
double score(const EncodedImage& img, const EncodedSentence& sent, ScoreVariant v);

/// Bidirectional hinge loss over a K x K score matrix (rows are images,
/// columns sentences, diagonal entries are the true pairs). Diagonal terms
/// are excluded from both sums.
double margin_loss(const Matrix& scores, double margin);
// dLoss/dScores with the "active iff argument > 0" hinge convention.
Matrix margin_loss_grad(const Matrix& scores, double margin);

struct AlignmentPair {
  std::span<const Vec> regions;
  WordIds words;
};

struct AlignmentLoss {
  double loss = 0.0;
  AlignmentParams grads;
  Matrix scores;
};

/// Batch objective and its exact subgradient. Tie conventions: a hinge is
/// active iff its argument is > 0, the ReLU derivative at 0 is 0, and the
/// max over regions routes to the lowest-index maximizer.
AlignmentLoss loss_and_gradients(const AlignmentParams& p, std::span<const AlignmentPair> batch,
                                 const AlignmentLossConfig& cfg, Rng* dropout_rng = nullptr);

/// Scores every (image k, sentence l) combination without dropout.
Matrix score_matrix(const AlignmentParams& p, std::span<const std::span<const Vec>> images,
                    std::span<const WordIds> sentences, ScoreVariant v);

/// Mean norm of each word's joint-space vector over all of its occurrences
/// in the given sentences. Words that never occur are omitted.
std::map<std::string, double> word_magnitudes(const AlignmentParams& p, const Vocabulary& vocab,
                                              std::span<const WordIds> sentences);

}  // namespace visemalign
