#include <benchmark/benchmark.h>

#include "visemalign/alignment_model.hpp"
#include "visemalign/eval.hpp"
#include "visemalign/generator.hpp"
#include "visemalign/mrf_decoder.hpp"

using namespace visemalign;

namespace {

struct AlignBatch {
  SynthDataset ds;
  std::vector<WordIds> encoded;
  std::vector<AlignmentPair> pairs;
  AlignmentParams params;
  AlignmentLossConfig loss;
};

AlignBatch align_batch(std::size_t images) {
  AlignBatch b;
  Rng rng(3);
  b.ds = synth_dataset(rng, images, 3, 16, 32);
  std::vector<Tokens> sents;
  for (const auto& it : b.ds.manifest.items) sents.push_back(it.sentences[0]);
  const Vocabulary vocab = build_vocabulary(sents, 1);
  for (const auto& s : sents) b.encoded.push_back(encode_sentence(vocab, s));
  for (std::size_t i = 0; i < images; ++i) b.pairs.push_back({b.ds.manifest.items[i].regions, b.encoded[i]});
  AlignmentHyper h;
  h.feature_dim = 32;
  h.vocab_size = vocab.word_count();
  h.embed_dim = 64;
  h.hidden_dim = 64;
  h.word_dim = 64;
  b.params = AlignmentParams::init(h, rng);
  return b;
}

void BM_AlignmentLossAndGradients(benchmark::State& state) {
  const auto b = align_batch(static_cast<std::size_t>(state.range(0)));
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_gradients(b.params, b.pairs, b.loss, &rng).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AlignmentLossAndGradients)->Arg(10)->Arg(40);

void BM_Decode(benchmark::State& state) {
  const auto words = static_cast<std::size_t>(state.range(0));
  const auto regions = static_cast<std::size_t>(state.range(1));
  Rng rng(2);
  ScoreGrid g{Matrix(words, regions)};
  for (double& x : g.unary.data()) x = rng.uniform() * 2.0 - 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(decode(g, 0.5).objective);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Decode)->Args({20, 20})->Args({50, 100});

GeneratorParams generator(std::size_t vocab, std::size_t hidden) {
  GeneratorHyper h;
  h.feature_dim = 64;
  h.vocab_size = vocab;
  h.word_dim = 64;
  h.hidden_dim = hidden;
  Rng rng(4);
  auto p = GeneratorParams::init(h, rng);
  for (double& x : p.out_weight.data()) x = rng.uniform() - 0.5;
  return p;
}

void BM_SequenceLoss(benchmark::State& state) {
  const auto p = generator(500, 128);
  const Vec feature(64, 0.1);
  WordIds caption;
  for (std::size_t i = 0; i < 12; ++i) caption.push_back((i * 37) % 500);
  for (auto _ : state) benchmark::DoNotOptimize(sequence_loss(p, feature, caption).loss);
}
BENCHMARK(BM_SequenceLoss);

void BM_BeamSearch(benchmark::State& state) {
  const auto p = generator(500, 128);
  const Vec feature(64, 0.1);
  const auto beam = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(beam_search(p, feature, beam, 16).front().logprob);
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(7);

void BM_CorpusBleu(benchmark::State& state) {
  Rng rng(5);
  std::vector<BleuExample> ex(500);
  auto sentence = [&] {
    Tokens t(8 + rng.uniform_index(8));
    for (auto& w : t) w = "w" + std::to_string(rng.uniform_index(50));
    return t;
  };
  for (auto& e : ex) {
    e.candidate = sentence();
    for (int r = 0; r < 5; ++r) e.references.push_back(sentence());
  }
  for (auto _ : state) benchmark::DoNotOptimize(corpus_bleu(ex, 4));
}
BENCHMARK(BM_CorpusBleu);

void BM_RankEval(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  Matrix s(n, n);
  for (double& x : s.data()) x = rng.uniform();
  std::vector<TruthPair> truth;
  for (std::size_t i = 0; i < n; ++i) truth.emplace_back(i, i);
  const std::vector<std::size_t> ks{1, 5, 10};
  for (auto _ : state) benchmark::DoNotOptimize(rank_eval(s, truth, ks).annotation.median_rank);
}
BENCHMARK(BM_RankEval)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
