#include <filesystem>

#include "doctest.h"
#include "visemalign/serialization.hpp"

using namespace visemalign;

namespace {

Vocabulary small_vocab() { return build_vocabulary({{"a", "dog"}, {"a", "cat", "runs"}}, 1); }

}  // namespace

TEST_CASE("manifest round trip") {
  Rng rng(3);
  const auto ds = synth_dataset(rng, 5, 2, 4, 6);
  const std::string text = manifest_to_json(ds.manifest);
  const DatasetManifest back = manifest_from_json(text);
  CHECK(manifest_to_json(back) == text);
  REQUIRE(back.items.size() == ds.manifest.items.size());
  CHECK(back.items[2].regions == ds.manifest.items[2].regions);
  CHECK(back.items[2].sentences == ds.manifest.items[2].sentences);
}

TEST_CASE("malformed manifests raise InputError") {
  CHECK_THROWS_AS(manifest_from_json("not json"), InputError);
  CHECK_THROWS_AS(manifest_from_json(R"({"items": []})"), InputError);
  CHECK_THROWS_AS(manifest_from_json(R"({"feature_dim": 2, "items": [{"id": "x", "split": "train",
      "regions": [[1, 2, 3]], "sentences": [["a"]]}]})"),
                  InputError);
  CHECK_THROWS_AS(manifest_from_json(R"({"feature_dim": 2, "items": [{"id": "x", "split": "holdout",
      "regions": [[1, 2]], "sentences": [["a"]]}]})"),
                  InputError);
  try {
    (void)load_manifest("/nonexistent/dir/manifest.json");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/dir/manifest.json") != std::string::npos);
  }
}

TEST_CASE("vocabulary round trip") {
  const Vocabulary v = small_vocab();
  const Vocabulary back = vocabulary_from_json(vocabulary_to_json(v));
  CHECK(back == v);
  CHECK(back.start_index() == v.word_count());
  CHECK(back.end_index() == v.word_count() + 1);
}

TEST_CASE("optimizer config keeps defaults for missing keys") {
  OptimizerConfig defaults;
  defaults.epochs = 42;
  const auto c = optimizer_config_from_json(R"({"optimizer": "rmsprop", "learning_rate": 0.002})", defaults);
  CHECK(c.kind == OptimizerKind::kRmsprop);
  CHECK(c.learning_rate == 0.002);
  CHECK(c.epochs == 42);
  CHECK(c.momentum == defaults.momentum);
  const auto again = optimizer_config_from_json(optimizer_config_to_json(c));
  CHECK(optimizer_config_to_json(again) == optimizer_config_to_json(c));
  CHECK_THROWS_AS(optimizer_config_from_json(R"({"optimizer": "adam"})"), InputError);
}

TEST_CASE("alignment checkpoint round trip is exact") {
  Rng rng(8);
  AlignmentCheckpoint c;
  c.vocab = small_vocab();
  c.hyper.feature_dim = 5;
  c.hyper.vocab_size = c.vocab.word_count();
  c.hyper.embed_dim = 3;
  c.hyper.hidden_dim = 4;
  c.hyper.word_dim = 2;
  c.hyper.loss.score = ScoreVariant::kSum;
  c.params = AlignmentParams::init(c.hyper, rng);
  c.provenance = {R"({"epochs":3})", 99};
  const std::string text = checkpoint_to_json(c);
  const auto back = alignment_checkpoint_from_json(text);
  CHECK(checkpoint_to_json(back) == text);
  CHECK(back.params.word_vectors == c.params.word_vectors);
  CHECK(back.params.fwd_weight == c.params.fwd_weight);
  CHECK(back.hyper.loss.score == ScoreVariant::kSum);
  CHECK(back.provenance.seed == 99);
  CHECK(text.find(kAlignFormat) != std::string::npos);

  CHECK_THROWS_AS(generator_checkpoint_from_json(text), InputError);
}

TEST_CASE("generator checkpoint round trip is exact") {
  Rng rng(9);
  GeneratorCheckpoint c;
  c.vocab = small_vocab();
  c.hyper.feature_dim = 3;
  c.hyper.vocab_size = c.vocab.word_count();
  c.hyper.word_dim = 2;
  c.hyper.hidden_dim = 4;
  c.hyper.relu_inputs = true;
  c.params = GeneratorParams::init(c.hyper, rng);
  c.source = CaptionSource::kRegion;
  const std::string text = checkpoint_to_json(c);
  const auto back = generator_checkpoint_from_json(text);
  CHECK(checkpoint_to_json(back) == text);
  CHECK(back.params.recurrent_weight == c.params.recurrent_weight);
  CHECK(back.params.relu_inputs);
  CHECK(back.source == CaptionSource::kRegion);
  CHECK_THROWS_AS(alignment_checkpoint_from_json(text), InputError);
}

TEST_CASE("checkpoint shape mismatches are rejected") {
  Rng rng(1);
  AlignmentCheckpoint c;
  c.vocab = small_vocab();
  c.hyper.feature_dim = 2;
  c.hyper.vocab_size = c.vocab.word_count() + 1;  // disagrees with vocab
  c.hyper.embed_dim = 2;
  c.hyper.hidden_dim = 2;
  c.hyper.word_dim = 2;
  c.params = AlignmentParams::init(c.hyper, rng);
  CHECK_THROWS_AS(alignment_checkpoint_from_json(checkpoint_to_json(c)), InputError);
}

TEST_CASE("alignment dumps round trip") {
  AlignmentDump d;
  d.image_id = "img7";
  d.sentence_index = 1;
  d.tokens = {"a", "red", "dog"};
  d.path.assignments = {0, 2, 2};
  d.path.objective = 1.25;
  const std::string one = alignment_dump_to_json(d);
  CHECK(one.find("\"segments\"") != std::string::npos);
  const std::string text = alignment_dumps_to_json({d, d}, 0.5, Provenance{});
  const auto back = alignment_dumps_from_json(text);
  REQUIRE(back.size() == 2);
  CHECK(back[1].image_id == "img7");
  CHECK(back[1].tokens == d.tokens);
  CHECK(back[1].path.assignments == d.path.assignments);
  CHECK(back[1].path.objective == 1.25);
  CHECK_THROWS_AS(alignment_dumps_from_json("[]"), InputError);
}

TEST_CASE("reports carry provenance") {
  const Matrix s{{1, 0}, {0, 1}};
  const std::vector<TruthPair> truth{{0, 0}, {1, 1}};
  const std::vector<std::size_t> ks{1, 5};
  const std::string rank = rank_report_to_json(rank_eval(s, truth, ks), Provenance{R"({"k":1})", 5});
  CHECK(rank.find("\"provenance\"") != std::string::npos);
  CHECK(rank.find("\"median_rank\"") != std::string::npos);

  CaptionReport cr;
  cr.bleu = {{1, 50.0}, {2, 25.0}};
  cr.novelty_rate = 0.5;
  cr.evaluated = 2;
  const std::string cap = caption_report_to_json(cr, Provenance{});
  CHECK(cap.find("\"novelty_rate\"") != std::string::npos);
  CHECK(cap.find("\"1\"") != std::string::npos);
}

TEST_CASE("text files") {
  const auto dir = std::filesystem::temp_directory_path() / "visemalign_test_serialization";
  std::filesystem::remove_all(dir);
  const auto path = dir / "nested" / "x.txt";
  write_text_file(path, "hello\n");
  CHECK(read_text_file(path) == "hello\n");
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_text_file(path), InputError);
}
