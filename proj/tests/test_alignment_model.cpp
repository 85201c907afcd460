#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "visemalign/alignment_model.hpp"

using namespace visemalign;
using visemalign::testing::check_gradients;
using visemalign::testing::KinkSignature;
using visemalign::testing::Real;
using visemalign::testing::reference_alignment_loss;

namespace {

AlignmentHyper small_hyper(std::size_t d = 5, std::size_t v = 7, std::size_t h = 4, std::size_t hidden = 3,
                           std::size_t dw = 4) {
  AlignmentHyper hy;
  hy.feature_dim = d;
  hy.vocab_size = v;
  hy.embed_dim = h;
  hy.hidden_dim = hidden;
  hy.word_dim = dw;
  return hy;
}

AlignmentParams random_params(const AlignmentHyper& hy, Rng& rng, double range) {
  AlignmentParams p = AlignmentParams::zeros(hy);
  for (auto& b : p.blocks())
    for (double& x : b.value->data()) x = rng.uniform(-range, range);
  return p;
}

struct Batch {
  std::vector<std::vector<Vec>> features;
  std::vector<AlignmentPair> pairs;
};

Batch random_batch(const AlignmentHyper& hy, Rng& rng, std::size_t k, std::size_t max_regions, std::size_t max_words) {
  Batch b;
  b.features.resize(k);
  for (auto& f : b.features) {
    f.resize(1 + rng.uniform_index(max_regions));
    for (auto& r : f) {
      r.resize(hy.feature_dim);
      for (double& x : r) x = rng.uniform(-1, 1);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    WordIds w(1 + rng.uniform_index(max_words));
    for (auto& x : w) x = rng.uniform_index(hy.vocab_size);
    b.pairs.push_back({b.features[i], w});
  }
  return b;
}

Vec col_of(const Matrix& m) { return Vec(m.data().begin(), m.data().end()); }

// Straight-line transcription of the BRNN using matrix products only.
std::vector<Vec> reference_words(const AlignmentParams& p, const WordIds& w) {
  const std::size_t n = w.size();
  auto mv = [](const Matrix& a, const Vec& x) { return col_of(matmul(a, Matrix::column(x))); };
  auto plus = [](Vec a, const Vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    return a;
  };
  std::vector<Vec> e(n), hf(n), hb(n), s(n);
  for (std::size_t t = 0; t < n; ++t) e[t] = relu(plus(mv(p.input_weight, p.word_vectors.col(w[t])), col_of(p.input_bias)));
  Vec zero(p.fwd_weight.rows(), 0.0);
  for (std::size_t t = 0; t < n; ++t)
    hf[t] = relu(plus(plus(e[t], mv(p.fwd_weight, t == 0 ? zero : hf[t - 1])), col_of(p.fwd_bias)));
  for (std::size_t t = n; t-- > 0;)
    hb[t] = relu(plus(plus(e[t], mv(p.bwd_weight, t + 1 == n ? zero : hb[t + 1])), col_of(p.bwd_bias)));
  for (std::size_t t = 0; t < n; ++t) s[t] = relu(plus(mv(p.out_weight, plus(hf[t], hb[t])), col_of(p.out_bias)));
  return s;
}

}  // namespace

TEST_CASE("embed_image") {
  auto hy = small_hyper(3, 4, 3);
  AlignmentParams p = AlignmentParams::zeros(hy);
  for (std::size_t i = 0; i < 3; ++i) p.region_weight(i, i) = 1.0;
  const std::vector<Vec> feats{{1, 2, 3}, {-1, 0, 4}};
  auto img = embed_image(p, feats);
  CHECK(img.regions == feats);

  AlignmentParams q = AlignmentParams::zeros(hy);
  q.region_bias.fill(0.25);
  for (const auto& v : embed_image(q, feats).regions) CHECK(v == Vec{0.25, 0.25, 0.25});

  Rng rng(2);
  AlignmentParams r = random_params(small_hyper(5, 4, 3), rng, 1.0);
  const std::vector<Vec> f5{{0.1, -0.2, 0.3, 0.4, -0.5}};
  const Matrix ref = matmul(r.region_weight, Matrix::column(f5[0]));
  const Vec got = embed_image(r, f5).regions[0];
  for (std::size_t i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(ref(i, 0) + r.region_bias(i, 0)).epsilon(1e-14));

  CHECK_THROWS_AS(embed_image(r, std::vector<Vec>{{1.0, 2.0}}), ShapeError);
}

TEST_CASE("embed_sentence single word: recurrent terms vanish") {
  Rng rng(4);
  auto hy = small_hyper();
  const AlignmentParams p = random_params(hy, rng, 0.5);
  const auto s = embed_sentence(p, {3});
  const Vec e = s.input_act[0];
  CHECK(s.fwd[0] == relu(add(e, p.fwd_bias.data())));
  CHECK(s.bwd[0] == relu(add(e, p.bwd_bias.data())));
}

TEST_CASE("embed_sentence zero params and contract") {
  const AlignmentParams p = AlignmentParams::zeros(small_hyper());
  const auto s = embed_sentence(p, {0, 1, 2});
  for (const auto& w : s.words_out)
    for (double x : w) CHECK(x == 0.0);
  CHECK_THROWS_AS(embed_sentence(p, {}), ContractError);
  CHECK_THROWS_AS(embed_sentence(p, {99}), ContractError);
}

TEST_CASE("embed_sentence matches straight-line recomputation") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto hy = small_hyper();
    const AlignmentParams p = random_params(hy, rng, 0.8);
    WordIds w(3);
    for (auto& x : w) x = rng.uniform_index(hy.vocab_size);
    const auto got = embed_sentence(p, w).words_out;
    const auto ref = reference_words(p, w);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < ref[t].size(); ++i) CHECK(got[t][i] == doctest::Approx(ref[t][i]).epsilon(1e-12));
  }
}

TEST_CASE("reversing the sentence and swapping streams preserves word vectors") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    auto hy = small_hyper();
    const AlignmentParams p = random_params(hy, rng, 0.8);
    AlignmentParams swapped = p;
    std::swap(swapped.fwd_weight, swapped.bwd_weight);
    std::swap(swapped.fwd_bias, swapped.bwd_bias);
    WordIds w(1 + rng.uniform_index(6));
    for (auto& x : w) x = rng.uniform_index(hy.vocab_size);
    WordIds rev(w.rbegin(), w.rend());
    auto a = embed_sentence(p, w).words_out;
    auto b = embed_sentence(swapped, rev).words_out;
    std::reverse(b.begin(), b.end());
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t i = 0; i < a[t].size(); ++i) CHECK(a[t][i] == doctest::Approx(b[t][i]).epsilon(1e-12));
  }
}

namespace {

EncodedImage image_of(std::vector<Vec> v) {
  EncodedImage img;
  img.regions = std::move(v);
  img.inputs = img.regions;
  return img;
}

EncodedSentence sentence_of(std::vector<Vec> s) {
  EncodedSentence out;
  out.words_out = std::move(s);
  out.words.assign(out.words_out.size(), 0);
  return out;
}

}  // namespace

TEST_CASE("score_max examples") {
  CHECK(score_max(image_of({{1, 0}}), sentence_of({{1, 0}, {1, 0}})) == 2.0);
  CHECK(score_max(image_of({{0, 0}, {0, 0}}), sentence_of({{1, 2}, {3, 4}})) == 0.0);

  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec> regions(3, Vec(4)), words(4, Vec(4));
    for (auto& v : regions)
      for (double& x : v) x = rng.uniform(-1, 1);
    for (auto& v : words)
      for (double& x : v) x = rng.uniform(-1, 1);
    double expected = 0.0;
    for (const auto& w : words) {
      double best = -1e300;
      for (const auto& r : regions) {
        double d = 0.0;
        for (std::size_t i = 0; i < 4; ++i) d += r[i] * w[i];
        best = std::max(best, d);
      }
      expected += best;
    }
    CHECK(score_max(image_of(regions), sentence_of(words)) == doctest::Approx(expected).epsilon(1e-14));
    // Region order does not matter.
    std::vector<Vec> permuted{regions[2], regions[0], regions[1]};
    CHECK(score_max(image_of(permuted), sentence_of(words)) == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("score_sum examples") {
  CHECK(score_sum(image_of({{1, 0}, {0, 1}}), sentence_of({{-1, -1}})) == 0.0);
  CHECK(score_sum(image_of({{2.5}}), sentence_of({{1.0}})) == 2.5);

  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vec> regions(3, Vec(4)), words(2, Vec(4));
    for (auto& v : regions)
      for (double& x : v) x = rng.uniform(-1, 1);
    for (auto& v : words)
      for (double& x : v) x = rng.uniform(-1, 1);
    double expected = 0.0;
    for (const auto& w : words)
      for (const auto& r : regions) {
        double d = 0.0;
        for (std::size_t i = 0; i < 4; ++i) d += r[i] * w[i];
        expected += std::max(0.0, d);
      }
    CHECK(score_sum(image_of(regions), sentence_of(words)) == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("score_max vs score_sum on constructed nonnegative cases") {
  // Each word has positive mass on exactly one region: equality.
  auto img = image_of({{1, 0}, {0, 1}});
  auto concentrated = sentence_of({{2, 0}, {0, 3}});
  CHECK(score_max(img, concentrated) == score_sum(img, concentrated));
  // A word supported by two regions: strict inequality.
  auto spread = sentence_of({{1, 1}});
  CHECK(score_max(img, spread) < score_sum(img, spread));
}

TEST_CASE("margin_loss examples") {
  Matrix sep(3, 3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) sep(i, i) = 10.0;
  CHECK(margin_loss(sep, 1.0) == 0.0);
  CHECK(margin_loss(Matrix{{0, 0}, {0, 0}}, 1.0) == 4.0);
  CHECK(margin_loss(Matrix{{3.7}}, 1.0) == 0.0);
  CHECK_THROWS_AS(margin_loss(Matrix(2, 3), 1.0), ShapeError);
}

TEST_CASE("margin_loss is invariant to a constant shift") {
  Rng rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t k = 1 + rng.uniform_index(5);
    Matrix s = rng.uniform_matrix(k, k, -2, 2);
    Matrix t = s;
    const double c = rng.uniform(-10, 10);
    for (double& x : t.data()) x += c;
    CHECK(margin_loss(t, 1.0) == doctest::Approx(margin_loss(s, 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("margin_loss_grad matches finite differences of the hinge sum") {
  Rng rng(32);
  const Matrix s = rng.uniform_matrix(4, 4, -1, 1);
  const Matrix g = margin_loss_grad(s, 1.0);
  const ScalarFn fn = [](std::span<const double> flat) { return margin_loss(Matrix(4, 4, Vec(flat.begin(), flat.end())), 1.0); };
  const Vec num = finite_diff_grad(fn, s.data(), 1e-6);
  for (std::size_t i = 0; i < 16; ++i) CHECK(g.data()[i] == doctest::Approx(num[i]).epsilon(1e-6));
}

TEST_CASE("loss_and_gradients: separated batch and singleton batch have zero gradients") {
  auto hy = small_hyper(2, 2, 2, 2, 2);
  AlignmentParams p = AlignmentParams::zeros(hy);
  // Region projection = 10 * identity; words map to the matching axis.
  p.region_weight(0, 0) = p.region_weight(1, 1) = 10.0;
  p.word_vectors(0, 0) = p.word_vectors(1, 1) = 1.0;
  p.input_weight(0, 0) = p.input_weight(1, 1) = 1.0;
  p.out_weight(0, 0) = p.out_weight(1, 1) = 1.0;
  const std::vector<Vec> img0{{1, 0}}, img1{{0, 1}};
  const std::vector<AlignmentPair> batch{{img0, {0}}, {img1, {1}}};
  AlignmentLossConfig cfg;
  cfg.dropout = 0.0;
  const auto r = loss_and_gradients(p, batch, cfg);
  CHECK(r.loss == 0.0);
  for (const auto& b : r.grads.blocks())
    for (double x : b.value->data()) CHECK(x == 0.0);

  Rng rng(3);
  const AlignmentParams q = random_params(small_hyper(), rng, 0.5);
  const std::vector<Vec> f{{0.1, 0.2, 0.3, 0.4, 0.5}};
  const std::vector<AlignmentPair> one{{f, {1, 2}}};
  const auto r1 = loss_and_gradients(q, one, cfg);
  CHECK(r1.loss == 0.0);
  for (const auto& b : r1.grads.blocks())
    for (double x : b.value->data()) CHECK(x == 0.0);
  CHECK_THROWS_AS(loss_and_gradients(q, std::span<const AlignmentPair>{}, cfg), ContractError);
}

TEST_CASE("loss_and_gradients matches finite differences") {
  Rng rng(101);
  for (auto variant : {ScoreVariant::kMax, ScoreVariant::kSum}) {
    int checked = 0;
    int attempts = 0;
    while (checked < 6 && attempts < 100) {
      ++attempts;
      auto hy = small_hyper(1 + rng.uniform_index(8), 6, 1 + rng.uniform_index(10), 1 + rng.uniform_index(10), 4);
      const AlignmentParams p = random_params(hy, rng, 0.1);
      const Batch batch = random_batch(hy, rng, 2 + rng.uniform_index(3), 4, 5);
      AlignmentLossConfig cfg;
      cfg.score = variant;
      cfg.dropout = 0.0;
      const auto analytic = loss_and_gradients(p, batch.pairs, cfg);
      if (analytic.loss == 0.0) continue;
      const auto res = check_gradients<AlignmentParams>(
          p, analytic.grads, [&](std::span<const Real> flat, KinkSignature* sig) {
            return reference_alignment_loss(flat, p, batch.pairs, cfg, nullptr, sig);
          });
      if (res.crossed_kink) continue;
      CHECK(std::abs(res.reference_loss - analytic.loss) < 1e-9 * std::max(1.0, analytic.loss));
      INFO("variant " << to_string(variant) << " worst block " << res.worst_block << "[" << res.worst_index
                      << "] analytic " << res.worst_analytic << " numeric " << res.worst_numeric);
      CHECK(res.max_rel_error < 1e-4);
      ++checked;
    }
    CHECK(checked == 6);
  }
}

TEST_CASE("loss_and_gradients with a replayed dropout mask matches finite differences") {
  Rng rng(202);
  auto hy = small_hyper(6, 6, 5, 5, 6);
  const AlignmentParams p = random_params(hy, rng, 0.3);
  const Batch batch = random_batch(hy, rng, 3, 3, 4);
  AlignmentLossConfig cfg;
  cfg.dropout = 0.3;
  auto run = [&](const AlignmentParams& q) {
    Rng masks(77);
    return loss_and_gradients(q, batch.pairs, cfg, &masks);
  };
  const auto analytic = run(p);
  REQUIRE(analytic.loss > 0.0);
  const auto masks = visemalign::testing::replay_dropout(batch.pairs, hy.feature_dim, hy.word_dim, cfg.dropout, 77);
  const auto res = check_gradients<AlignmentParams>(
      p, analytic.grads, [&](std::span<const Real> flat, KinkSignature* sig) {
        return reference_alignment_loss(flat, p, batch.pairs, cfg, &masks, sig);
      });
  REQUIRE_FALSE(res.crossed_kink);
  CHECK(std::abs(res.reference_loss - analytic.loss) < 1e-9 * std::max(1.0, analytic.loss));
  INFO("worst block " << res.worst_block << " analytic " << res.worst_analytic << " numeric " << res.worst_numeric);
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("dropout is training-only") {
  Rng rng(5);
  auto hy = small_hyper();
  const AlignmentParams p = random_params(hy, rng, 0.5);
  const auto a = embed_sentence(p, {1, 2, 3});
  const auto b = embed_sentence(p, {1, 2, 3});
  CHECK(a.words_out == b.words_out);
  Rng masks(1);
  const auto c = embed_sentence(p, {1, 2, 3}, DropoutSource{&masks, 0.5});
  CHECK(c.dropout_masks.size() == 3);
  for (const auto& m : c.dropout_masks)
    for (double x : m) CHECK((x == 0.0 || x == 2.0));
}

TEST_CASE("word_magnitudes") {
  const Vocabulary vocab = build_vocabulary({{"a", "b", "c"}}, 1);
  auto hy = small_hyper(3, vocab.word_count());
  const AlignmentParams zero = AlignmentParams::zeros(hy);
  const std::vector<WordIds> sents{{0, 1}, {2}};
  for (const auto& [tok, mag] : word_magnitudes(zero, vocab, sents)) CHECK(mag == 0.0);

  Rng rng(6);
  const AlignmentParams p = random_params(hy, rng, 0.8);
  const std::vector<WordIds> once{{0, 1, 0}};
  const auto mags = word_magnitudes(p, vocab, once);
  const auto enc = embed_sentence(p, once[0]);
  CHECK(mags.at(vocab.token(1)) == doctest::Approx(norm2(enc.words_out[1])));
  CHECK(mags.at(vocab.token(0)) == doctest::Approx(0.5 * (norm2(enc.words_out[0]) + norm2(enc.words_out[2]))));
  CHECK(mags.count(vocab.token(2)) == 0);
}
