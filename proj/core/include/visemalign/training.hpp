#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "visemalign/alignment_model.hpp"
#include "visemalign/generator.hpp"
#include "visemalign/optimize.hpp"

namespace visemalign {

// Called after every epoch with the 1-based epoch number and its loss.
// Returning false stops training early.
using EpochCallback = std::function<bool(std::size_t epoch, double loss)>;

struct TrainLog {
  std::vector<double> epoch_loss;
  bool stopped_early = false;
};

/// Minibatch training of the embedding model. Parameters are initialised
/// from cfg.seed; the same seed also drives pair shuffling and dropout, so
/// a run is fully determined by (hyper, pairs, cfg). The epoch loss is the
/// mean batch loss over the epoch. Gradients are clipped after batch
/// aggregation. Throws NumericError on a non-finite score or loss, or naming
/// the first parameter or gradient block that turns non-finite.
struct AlignmentTraining {
  AlignmentParams params;
  TrainLog log;
};
AlignmentTraining train_alignment(const AlignmentHyper& hyper, std::span<const AlignmentPair> pairs,
                                  const OptimizerConfig& cfg, const EpochCallback& on_epoch = {});

struct CaptionExample {
  std::span<const double> feature;
  WordIds words;
};

/// Minibatch training of the caption generator. The output bias starts at
/// init_output_bias() of the training captions. Each batch minimises the
/// mean negative log-likelihood per predicted token; the epoch loss is the
/// same quantity over the whole training set.
struct GeneratorTraining {
  GeneratorParams params;
  double initial_loss = 0.0;  // per-token loss before the first update
  TrainLog log;
};
GeneratorTraining train_generator(const GeneratorHyper& hyper, std::span<const CaptionExample> examples,
                                  const OptimizerConfig& cfg, const EpochCallback& on_epoch = {});

/// Per-token loss of the generator over a caption set.
double caption_loss(const GeneratorParams& p, std::span<const CaptionExample> examples);

}  // namespace visemalign
