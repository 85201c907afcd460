#pragma once

// Straight-line forward passes in extended precision. They share no code
// with the library and serve as the finite-difference oracle: roundoff in
// long double sits far below the 1e-8 relative-error floor, so gradient
// entries that cancel to zero in exact arithmetic still compare cleanly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "visemalign/alignment_model.hpp"
#include "visemalign/generator.hpp"
#include "visemalign/numerics.hpp"

namespace visemalign::testing {

using Real = long double;
using RVec = std::vector<Real>;

// Discrete state of every non-smooth decision in the computation.
using KinkSignature = std::vector<std::int8_t>;

// Row-major view into a slice of a flat parameter vector.
struct RView {
  const Real* d = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Real operator()(std::size_t r, std::size_t c) const { return d[r * cols + c]; }
};

// Splits a flat vector into views with the shapes of a parameter struct's
// blocks, in block order.
template <typename Params>
std::vector<RView> split_views(std::span<const Real> flat, const Params& shapes) {
  std::vector<RView> views;
  std::size_t offset = 0;
  for (const auto& b : shapes.blocks()) {
    views.push_back({flat.data() + offset, b.value->rows(), b.value->cols()});
    offset += b.value->size();
  }
  return views;
}

template <typename Params>
RVec to_extended(const Params& p) {
  RVec out;
  for (const auto& b : p.blocks())
    for (double x : b.value->data()) out.push_back(x);
  return out;
}

inline RVec ref_affine(const RView& w, const RVec& x, const RView* bias) {
  RVec y(w.rows, 0.0L);
  for (std::size_t r = 0; r < w.rows; ++r) {
    Real s = bias ? (*bias)(r, 0) : 0.0L;
    for (std::size_t c = 0; c < w.cols; ++c) s += w(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

inline void ref_relu(RVec& v, KinkSignature* sig) {
  for (Real& x : v) {
    if (sig) sig->push_back(x > 0 ? 1 : 0);
    x = x > 0 ? x : 0.0L;
  }
}

inline Real ref_dot(const RVec& a, const RVec& b) {
  Real s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Keep-masks (already scaled) for one alignment batch, in the order the
// training pass draws them: per pair, every region feature, then every
// word vector.
struct DropoutReplay {
  std::vector<std::vector<Vec>> region_masks;
  std::vector<std::vector<Vec>> word_masks;
};

inline DropoutReplay replay_dropout(std::span<const AlignmentPair> batch, std::size_t feature_dim,
                                    std::size_t word_dim, double rate, std::uint64_t seed) {
  DropoutReplay r;
  Rng rng(seed);
  const double keep = 1.0 / (1.0 - rate);
  auto draw = [&](std::size_t n) {
    Vec m(n);
    for (double& x : m) x = rng.bernoulli(rate) ? 0.0 : keep;
    return m;
  };
  for (const auto& pair : batch) {
    r.region_masks.emplace_back();
    for (std::size_t i = 0; i < pair.regions.size(); ++i) r.region_masks.back().push_back(draw(feature_dim));
    r.word_masks.emplace_back();
    for (std::size_t t = 0; t < pair.words.size(); ++t) r.word_masks.back().push_back(draw(word_dim));
  }
  return r;
}

// Margin loss of the alignment model. Block order follows
// AlignmentParams::blocks().
inline Real reference_alignment_loss(std::span<const Real> flat, const AlignmentParams& shapes,
                                     std::span<const AlignmentPair> batch, const AlignmentLossConfig& cfg,
                                     const DropoutReplay* dropout, KinkSignature* sig) {
  const auto v = split_views(flat, shapes);
  const RView& wm = v[0];
  const RView& bm = v[1];
  const RView& we = v[2];
  const RView& wx = v[3];
  const RView& bx = v[4];
  const RView& wf = v[5];
  const RView& bf = v[6];
  const RView& wb = v[7];
  const RView& bb = v[8];
  const RView& wd = v[9];
  const RView& bd = v[10];
  const std::size_t k = batch.size();
  const std::size_t hid = wf.rows;

  std::vector<std::vector<RVec>> regions(k), words(k);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t i = 0; i < batch[a].regions.size(); ++i) {
      RVec f(batch[a].regions[i].begin(), batch[a].regions[i].end());
      if (dropout)
        for (std::size_t j = 0; j < f.size(); ++j) f[j] *= dropout->region_masks[a][i][j];
      regions[a].push_back(ref_affine(wm, f, &bm));
    }
    const auto& ids = batch[a].words;
    const std::size_t n = ids.size();
    std::vector<RVec> e(n);
    for (std::size_t t = 0; t < n; ++t) {
      RVec x(we.rows);
      for (std::size_t r = 0; r < we.rows; ++r) x[r] = we(r, ids[t]);
      if (dropout)
        for (std::size_t r = 0; r < x.size(); ++r) x[r] *= dropout->word_masks[a][t][r];
      e[t] = ref_affine(wx, x, &bx);
      ref_relu(e[t], sig);
    }
    std::vector<RVec> hf(n), hb(n);
    RVec prev(hid, 0.0L);
    for (std::size_t t = 0; t < n; ++t) {
      hf[t] = ref_affine(wf, prev, &bf);
      for (std::size_t r = 0; r < hid; ++r) hf[t][r] += e[t][r];
      ref_relu(hf[t], sig);
      prev = hf[t];
    }
    prev.assign(hid, 0.0L);
    for (std::size_t t = n; t-- > 0;) {
      hb[t] = ref_affine(wb, prev, &bb);
      for (std::size_t r = 0; r < hid; ++r) hb[t][r] += e[t][r];
      ref_relu(hb[t], sig);
      prev = hb[t];
    }
    for (std::size_t t = 0; t < n; ++t) {
      RVec sum(hid);
      for (std::size_t r = 0; r < hid; ++r) sum[r] = hf[t][r] + hb[t][r];
      RVec s = ref_affine(wd, sum, &bd);
      ref_relu(s, sig);
      words[a].push_back(std::move(s));
    }
  }

  std::vector<std::vector<Real>> score(k, std::vector<Real>(k, 0.0L));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      Real total = 0.0L;
      for (const auto& s : words[b]) {
        if (cfg.score == ScoreVariant::kMax) {
          std::size_t best = 0;
          Real bd_ = ref_dot(regions[a][0], s);
          for (std::size_t i = 1; i < regions[a].size(); ++i) {
            const Real d = ref_dot(regions[a][i], s);
            if (d > bd_) {
              bd_ = d;
              best = i;
            }
          }
          if (sig) sig->push_back(static_cast<std::int8_t>(best));
          total += bd_;
        } else {
          for (const auto& r : regions[a]) {
            const Real d = ref_dot(r, s);
            if (sig) sig->push_back(d > 0 ? 1 : 0);
            if (d > 0) total += d;
          }
        }
      }
      score[a][b] = total;
    }
  }

  Real loss = 0.0L;
  const Real m = cfg.margin;
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      if (a == b) continue;
      const Real row = score[a][b] - score[a][a] + m;
      const Real col = score[b][a] - score[a][a] + m;
      if (sig) {
        sig->push_back(row > 0 ? 1 : 0);
        sig->push_back(col > 0 ? 1 : 0);
      }
      if (row > 0) loss += row;
      if (col > 0) loss += col;
    }
  }
  return loss;
}

// Mean per-token negative log-likelihood of the generator. Block order
// follows GeneratorParams::blocks().
inline Real reference_generator_loss(std::span<const Real> flat, const GeneratorParams& shapes,
                                     std::span<const double> feature, const WordIds& target, KinkSignature* sig) {
  const auto v = split_views(flat, shapes);
  const RView& wi = v[0];
  const RView& wv = v[1];
  const RView& wx = v[2];
  const RView& wh = v[3];
  const RView& bh = v[4];
  const RView& wo = v[5];
  const RView& bo = v[6];
  const std::size_t vocab = wo.rows - 1;
  const std::size_t hid = wh.rows;

  RVec img = ref_affine(wi, RVec(feature.begin(), feature.end()), nullptr);
  if (shapes.relu_inputs) ref_relu(img, sig);

  RVec h(hid, 0.0L);
  Real nll = 0.0L;
  const std::size_t steps = target.size() + 1;
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t col = t == 0 ? vocab : target[t - 1];
    RVec x(wv.rows);
    for (std::size_t r = 0; r < wv.rows; ++r) x[r] = wv(r, col);
    RVec z = ref_affine(wx, x, nullptr);
    if (shapes.relu_inputs) ref_relu(z, sig);
    const RVec rec = ref_affine(wh, h, &bh);
    for (std::size_t r = 0; r < hid; ++r) z[r] += rec[r];
    if (t == 0)
      for (std::size_t r = 0; r < hid; ++r) z[r] += img[r];
    ref_relu(z, sig);
    h = z;
    const RVec logits = ref_affine(wo, h, &bo);
    const Real mx = *std::max_element(logits.begin(), logits.end());
    Real denom = 0.0L;
    for (Real l : logits) denom += std::exp(l - mx);
    const std::size_t y = t < target.size() ? target[t] : vocab;
    nll -= logits[y] - mx - std::log(denom);
  }
  return nll / static_cast<Real>(steps);
}

}  // namespace visemalign::testing
