#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "visemalign/corpus.hpp"
#include "visemalign/numerics.hpp"
#include "visemalign/param_blocks.hpp"

namespace visemalign {

// Index conventions shared with Vocabulary:
//   input columns:  words [0, V), START = V, END = V + 1 (never fed)
//   output classes: words [0, V), END = V
struct GeneratorHyper {
  std::size_t feature_dim = 0;
  std::size_t vocab_size = 0;  // regular words
  std::size_t word_dim = 16;
  std::size_t hidden_dim = 32;
  // When set, the word projection and the image bias each pass through a
  // ReLU before entering the recurrence.
  bool relu_inputs = false;

  void validate() const;
  std::size_t start_column() const { return vocab_size; }
  std::size_t end_class() const { return vocab_size; }
};

struct GeneratorParams {
  Matrix image_weight;      // hidden x feature
  Matrix word_vectors;      // word_dim x (V + 2)
  Matrix input_weight;      // hidden x word_dim
  Matrix recurrent_weight;  // hidden x hidden
  Matrix hidden_bias;       // hidden x 1
  Matrix out_weight;        // (V + 1) x hidden
  Matrix out_bias;          // (V + 1) x 1
  bool relu_inputs = false; // not trainable

  static GeneratorParams zeros(const GeneratorHyper& hyper);
  /// Weights uniform in [-r, r], r = sqrt(3 / fan_in), recurrent weights at
  /// half that range, word vectors in [-0.5, 0.5]. The output layer starts
  /// at zero so the first predictions are exactly softmax(out_bias).
  static GeneratorParams init(const GeneratorHyper& hyper, Rng& rng);

  ParamBlocks blocks();
  ParamBlocks blocks() const { return const_cast<GeneratorParams*>(this)->blocks(); }

  std::size_t vocab_size() const { return out_weight.rows() - 1; }
  std::size_t end_class() const { return vocab_size(); }
  std::size_t start_column() const { return vocab_size(); }
  std::size_t hidden_dim() const { return recurrent_weight.rows(); }
  std::size_t feature_dim() const { return image_weight.cols(); }
};

struct StepOutput {
  Vec pre;     // recurrence pre-activation
  Vec hidden;  // ReLU(pre)
  Vec logits;  // (V + 1) unnormalised log-probabilities
};

// Image context injected into the first step only.
Vec image_bias(const GeneratorParams& p, std::span<const double> feature);

/// One recurrence step. image_context is supplied on the first step only.
StepOutput step(const GeneratorParams& p, std::span<const double> x, std::span<const double> h_prev,
                const Vec* image_context);

struct SequenceLoss {
  double loss = 0.0;       // mean negative log-likelihood per predicted token
  double nll_sum = 0.0;
  std::size_t predicted = 0;  // target length + 1 (END)
  GeneratorParams grads;
};

/// Teacher-forced loss for one caption: START then the caption words as
/// inputs; the caption words then END as targets. Gradients are exact
/// backprop-through-time of the mean loss.
SequenceLoss sequence_loss(const GeneratorParams& p, std::span<const double> feature, const WordIds& target);

struct Generated {
  WordIds words;          // END excluded
  double logprob = 0.0;
  bool finished = false;  // false when max_len words were emitted without END
};

/// Argmax decoding. At most max_len tokens are emitted (END counts as one);
/// ties resolve to the lowest class index.
Generated generate_greedy(const GeneratorParams& p, std::span<const double> feature, std::size_t max_len);

/// Multinomial sampling from the softmax at every step.
Generated generate_sample(const GeneratorParams& p, std::span<const double> feature, Rng& rng,
                          std::size_t max_len);

/// Beam search over summed log-probabilities without length normalisation.
/// Each round expands every live hypothesis by every class and keeps the
/// best `beam` candidates; candidates ending in END retire. The result
/// merges retired and still-live hypotheses, ordered by log-probability
/// (ties: lexicographic token order with END as class V), truncated to
/// `beam` entries.
std::vector<Generated> beam_search(const GeneratorParams& p, std::span<const double> feature,
                                   std::size_t beam, std::size_t max_len);

/// b[w] = ln((count_w + 1) / sum(count + 1)) over the V + 1 output classes.
Vec init_output_bias(std::span<const double> counts);

/// Target-class counts over captions: every word occurrence plus one END
/// per caption. Size V + 1.
Vec output_class_counts(std::span<const WordIds> captions, std::size_t vocab_size);

}  // namespace visemalign
