#include "visemalign/training.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace visemalign {

namespace {

std::vector<std::size_t> batch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  return order;
}

}  // namespace

AlignmentTraining train_alignment(const AlignmentHyper& hyper, std::span<const AlignmentPair> pairs,
                                  const OptimizerConfig& cfg, const EpochCallback& on_epoch) {
  hyper.validate();
  cfg.validate();
  if (pairs.empty()) throw ContractError("train_alignment: no training pairs");
  Rng rng(cfg.seed);
  AlignmentTraining out{AlignmentParams::init(hyper, rng), {}};
  OptimState state(cfg, out.params.blocks());

  std::vector<AlignmentPair> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = batch_order(pairs.size(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(pairs[order[i]]);
      auto r = loss_and_gradients(out.params, batch, hyper.loss, &rng);
      if (!std::isfinite(r.loss) || !all_finite(r.scores.data()))
        throw NumericError("forward pass: non-finite image-sentence score in epoch " + std::to_string(epoch));
      require_finite(r.grads.blocks(), "gradient");
      clip_elementwise(r.grads.blocks(), cfg.clip);
      state.step(out.params.blocks(), r.grads.blocks());
      require_finite(out.params.blocks(), "parameter");
      total += r.loss;
      ++batches;
    }
    const double loss = total / static_cast<double>(batches);
    out.log.epoch_loss.push_back(loss);
    if (on_epoch && !on_epoch(epoch, loss)) {
      out.log.stopped_early = true;
      break;
    }
  }
  return out;
}

double caption_loss(const GeneratorParams& p, std::span<const CaptionExample> examples) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    const auto r = sequence_loss(p, ex.feature, ex.words);
    nll += r.nll_sum;
    tokens += r.predicted;
  }
  return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
}

GeneratorTraining train_generator(const GeneratorHyper& hyper, std::span<const CaptionExample> examples,
                                  const OptimizerConfig& cfg, const EpochCallback& on_epoch) {
  hyper.validate();
  cfg.validate();
  if (examples.empty()) throw ContractError("train_generator: no training captions");
  Rng rng(cfg.seed);
  GeneratorTraining out{GeneratorParams::init(hyper, rng), 0.0, {}};

  std::vector<WordIds> captions;
  captions.reserve(examples.size());
  for (const auto& ex : examples) captions.push_back(ex.words);
  const Vec bias = init_output_bias(output_class_counts(captions, hyper.vocab_size));
  std::copy(bias.begin(), bias.end(), out.params.out_bias.data().begin());
  out.initial_loss = caption_loss(out.params, examples);

  OptimState state(cfg, out.params.blocks());
  GeneratorParams grads = GeneratorParams::zeros(hyper);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = batch_order(examples.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<SequenceLoss> parts;
      std::size_t tokens = 0;
      for (std::size_t i = start; i < stop; ++i) {
        const auto& ex = examples[order[i]];
        parts.push_back(sequence_loss(out.params, ex.feature, ex.words));
        if (!std::isfinite(parts.back().loss))
          throw NumericError("forward pass: non-finite caption loss in epoch " + std::to_string(epoch));
        tokens += parts.back().predicted;
      }
      // Each part's gradient is of its own per-token mean; reweight by its
      // token share to get the gradient of the batch per-token mean.
      for (auto& b : grads.blocks()) b.value->fill(0.0);
      const auto dst = grads.blocks();
      for (const auto& part : parts) {
        const double w = static_cast<double>(part.predicted) / static_cast<double>(tokens);
        const auto src = part.grads.blocks();
        for (std::size_t b = 0; b < dst.size(); ++b) axpy(w, src[b].value->data(), dst[b].value->data());
      }
      require_finite(dst, "gradient");
      clip_elementwise(dst, cfg.clip);
      state.step(out.params.blocks(), dst);
      require_finite(out.params.blocks(), "parameter");
    }
    const double loss = caption_loss(out.params, examples);
    out.log.epoch_loss.push_back(loss);
    if (on_epoch && !on_epoch(epoch, loss)) {
      out.log.stopped_early = true;
      break;
    }
  }
  return out;
}

}  // namespace visemalign
