#include "visemalign/alignment_model.hpp"

#include <cmath>

namespace visemalign {

std::string_view to_string(ScoreVariant v) { return v == ScoreVariant::kMax ? "max" : "sum"; }

ScoreVariant parse_score_variant(std::string_view s) {
  if (s == "max") return ScoreVariant::kMax;
  if (s == "sum") return ScoreVariant::kSum;
  throw ContractError("unknown score variant '" + std::string(s) + "' (expected max|sum)");
}

void AlignmentHyper::validate() const {
  if (feature_dim == 0 || vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 || word_dim == 0) {
    throw ContractError("alignment hyperparameters: all dimensions must be positive");
  }
  if (!(loss.margin > 0.0)) throw ContractError("alignment hyperparameters: margin must be > 0");
  if (!(loss.dropout >= 0.0 && loss.dropout < 1.0)) {
    throw ContractError("alignment hyperparameters: dropout must be in [0, 1)");
  }
}

AlignmentParams AlignmentParams::zeros(const AlignmentHyper& hy) {
  hy.validate();
  AlignmentParams p;
  p.region_weight = Matrix(hy.embed_dim, hy.feature_dim);
  p.region_bias = Matrix(hy.embed_dim, 1);
  p.word_vectors = Matrix(hy.word_dim, hy.vocab_size);
  p.input_weight = Matrix(hy.hidden_dim, hy.word_dim);
  p.input_bias = Matrix(hy.hidden_dim, 1);
  p.fwd_weight = Matrix(hy.hidden_dim, hy.hidden_dim);
  p.fwd_bias = Matrix(hy.hidden_dim, 1);
  p.bwd_weight = Matrix(hy.hidden_dim, hy.hidden_dim);
  p.bwd_bias = Matrix(hy.hidden_dim, 1);
  p.out_weight = Matrix(hy.embed_dim, hy.hidden_dim);
  p.out_bias = Matrix(hy.embed_dim, 1);
  return p;
}

AlignmentParams AlignmentParams::init(const AlignmentHyper& hy, Rng& rng) {
  AlignmentParams p = zeros(hy);
  auto fill_fan_in = [&](Matrix& m) {
    const double r = std::sqrt(3.0 / static_cast<double>(m.cols()));
    for (double& v : m.data()) v = rng.uniform(-r, r);
  };
  fill_fan_in(p.region_weight);
  for (double& v : p.word_vectors.data()) v = rng.uniform(-0.5, 0.5);
  fill_fan_in(p.input_weight);
  fill_fan_in(p.fwd_weight);
  fill_fan_in(p.bwd_weight);
  fill_fan_in(p.out_weight);
  return p;
}

ParamBlocks AlignmentParams::blocks() {
  return {{"region_weight", &region_weight, true}, {"region_bias", &region_bias, false},
          {"word_vectors", &word_vectors, true},   {"input_weight", &input_weight, true},
          {"input_bias", &input_bias, false},      {"fwd_weight", &fwd_weight, true},
          {"fwd_bias", &fwd_bias, false},          {"bwd_weight", &bwd_weight, true},
          {"bwd_bias", &bwd_bias, false},          {"out_weight", &out_weight, true},
          {"out_bias", &out_bias, false}};
}

namespace {

Vec dropout_mask(std::size_t n, const DropoutSource& d) {
  Vec mask(n);
  const double keep_scale = 1.0 / (1.0 - d.rate);
  for (double& m : mask) m = d.rng->bernoulli(d.rate) ? 0.0 : keep_scale;
  return mask;
}

void hadamard_inplace(Vec& a, std::span<const double> b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
}

// dz = dy * 1[z > 0]
Vec relu_backward(std::span<const double> dy, std::span<const double> pre) {
  Vec dz(dy.size());
  for (std::size_t i = 0; i < dy.size(); ++i) dz[i] = pre[i] > 0.0 ? dy[i] : 0.0;
  return dz;
}

Vec affine(const Matrix& w, std::span<const double> x, const Matrix& b) {
  Vec y = matvec(w, x);
  axpy(1.0, b.data(), y);
  return y;
}

std::size_t best_region(const EncodedImage& img, std::span<const double> word) {
  std::size_t best = 0;
  double best_dot = dot(img.regions[0], word);
  for (std::size_t i = 1; i < img.regions.size(); ++i) {
    const double d = dot(img.regions[i], word);
    if (d > best_dot) {
      best_dot = d;
      best = i;
    }
  }
  return best;
}

}  // namespace

EncodedImage embed_image(const AlignmentParams& p, std::span<const Vec> features, DropoutSource dropout) {
  EncodedImage img;
  img.inputs.reserve(features.size());
  img.regions.reserve(features.size());
  for (const auto& f : features) {
    if (f.size() != p.feature_dim()) {
      throw ShapeError("embed_image: feature of length " + std::to_string(f.size()) +
                       " but region_weight expects " + std::to_string(p.feature_dim()));
    }
    Vec in = f;
    if (dropout.active()) hadamard_inplace(in, dropout_mask(in.size(), dropout));
    img.regions.push_back(affine(p.region_weight, in, p.region_bias));
    img.inputs.push_back(std::move(in));
  }
  return img;
}

EncodedSentence embed_sentence(const AlignmentParams& p, const WordIds& words, DropoutSource dropout) {
  if (words.empty()) throw ContractError("embed_sentence: empty sentence");
  const std::size_t n = words.size();
  const std::size_t hidden = p.fwd_weight.rows();
  EncodedSentence s;
  s.words = words;
  s.x.resize(n);
  s.input_pre.resize(n);
  s.input_act.resize(n);
  s.fwd_pre.resize(n);
  s.fwd.resize(n);
  s.bwd_pre.resize(n);
  s.bwd.resize(n);
  s.out_pre.resize(n);
  s.words_out.resize(n);

  for (std::size_t t = 0; t < n; ++t) {
    if (words[t] >= p.vocab_size()) {
      throw ContractError("embed_sentence: word index " + std::to_string(words[t]) +
                          " outside vocabulary of size " + std::to_string(p.vocab_size()));
    }
    s.x[t] = p.word_vectors.col(words[t]);
    if (dropout.active()) {
      s.dropout_masks.push_back(dropout_mask(s.x[t].size(), dropout));
      hadamard_inplace(s.x[t], s.dropout_masks.back());
    }
    s.input_pre[t] = affine(p.input_weight, s.x[t], p.input_bias);
    s.input_act[t] = relu(s.input_pre[t]);
  }

  Vec prev(hidden, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    Vec z = matvec(p.fwd_weight, prev);
    axpy(1.0, s.input_act[t], z);
    axpy(1.0, p.fwd_bias.data(), z);
    s.fwd_pre[t] = z;
    s.fwd[t] = relu(z);
    prev = s.fwd[t];
  }
  Vec next(hidden, 0.0);
  for (std::size_t t = n; t-- > 0;) {
    Vec z = matvec(p.bwd_weight, next);
    axpy(1.0, s.input_act[t], z);
    axpy(1.0, p.bwd_bias.data(), z);
    s.bwd_pre[t] = z;
    s.bwd[t] = relu(z);
    next = s.bwd[t];
  }
  for (std::size_t t = 0; t < n; ++t) {
    s.out_pre[t] = affine(p.out_weight, add(s.fwd[t], s.bwd[t]), p.out_bias);
    s.words_out[t] = relu(s.out_pre[t]);
  }
  return s;
}

double score_max(const EncodedImage& img, const EncodedSentence& sent) {
  if (img.regions.empty()) return 0.0;
  double total = 0.0;
  for (const auto& w : sent.words_out) total += dot(img.regions[best_region(img, w)], w);
  return total;
}

double score_sum(const EncodedImage& img, const EncodedSentence& sent) {
  double total = 0.0;
  for (const auto& w : sent.words_out)
    for (const auto& v : img.regions) total += std::max(0.0, dot(v, w));
  return total;
}

double score(const EncodedImage& img, const EncodedSentence& sent, ScoreVariant v) {
  return v == ScoreVariant::kMax ? score_max(img, sent) : score_sum(img, sent);
}

double margin_loss(const Matrix& scores, double margin) {
  if (scores.rows() != scores.cols()) {
    throw ShapeError("margin_loss: score matrix must be square, got " + scores.shape_string());
  }
  const std::size_t k = scores.rows();
  double total = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    const double diag = scores(a, a);
    for (std::size_t b = 0; b < k; ++b) {
      if (b == a) continue;
      total += std::max(0.0, scores(a, b) - diag + margin);
      total += std::max(0.0, scores(b, a) - diag + margin);
    }
  }
  return total;
}

Matrix margin_loss_grad(const Matrix& scores, double margin) {
  if (scores.rows() != scores.cols()) {
    throw ShapeError("margin_loss_grad: score matrix must be square, got " + scores.shape_string());
  }
  const std::size_t k = scores.rows();
  Matrix g(k, k);
  for (std::size_t a = 0; a < k; ++a) {
    const double diag = scores(a, a);
    for (std::size_t b = 0; b < k; ++b) {
      if (b == a) continue;
      if (scores(a, b) - diag + margin > 0.0) {
        g(a, b) += 1.0;
        g(a, a) -= 1.0;
      }
      if (scores(b, a) - diag + margin > 0.0) {
        g(b, a) += 1.0;
        g(a, a) -= 1.0;
      }
    }
  }
  return g;
}

namespace {

// Accumulates parameter gradients for one sentence given dLoss/d(word vectors).
void backprop_sentence(const AlignmentParams& p, const EncodedSentence& s,
                       const std::vector<Vec>& d_words, AlignmentParams& g) {
  const std::size_t n = s.words.size();
  const std::size_t hidden = p.fwd_weight.rows();
  std::vector<Vec> d_state(n);  // shared gradient of fwd[t] + bwd[t]
  for (std::size_t t = 0; t < n; ++t) {
    Vec dz = relu_backward(d_words[t], s.out_pre[t]);
    add_outer(g.out_weight, dz, add(s.fwd[t], s.bwd[t]));
    axpy(1.0, dz, g.out_bias.data());
    d_state[t] = matvec_transposed(p.out_weight, dz);
  }

  std::vector<Vec> d_input(n, Vec(hidden, 0.0));

  // Left-to-right stream, walked in reverse.
  Vec carry(hidden, 0.0);
  for (std::size_t t = n; t-- > 0;) {
    Vec dh = add(d_state[t], carry);
    Vec dz = relu_backward(dh, s.fwd_pre[t]);
    axpy(1.0, dz, d_input[t]);
    axpy(1.0, dz, g.fwd_bias.data());
    if (t > 0) {
      add_outer(g.fwd_weight, dz, s.fwd[t - 1]);
      carry = matvec_transposed(p.fwd_weight, dz);
    }
  }
  // Right-to-left stream, walked forward.
  carry.assign(hidden, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    Vec dh = add(d_state[t], carry);
    Vec dz = relu_backward(dh, s.bwd_pre[t]);
    axpy(1.0, dz, d_input[t]);
    axpy(1.0, dz, g.bwd_bias.data());
    if (t + 1 < n) {
      add_outer(g.bwd_weight, dz, s.bwd[t + 1]);
      carry = matvec_transposed(p.bwd_weight, dz);
    }
  }

  for (std::size_t t = 0; t < n; ++t) {
    Vec dz = relu_backward(d_input[t], s.input_pre[t]);
    add_outer(g.input_weight, dz, s.x[t]);
    axpy(1.0, dz, g.input_bias.data());
    Vec dx = matvec_transposed(p.input_weight, dz);
    if (!s.dropout_masks.empty()) hadamard_inplace(dx, s.dropout_masks[t]);
    g.word_vectors.add_to_col(s.words[t], dx);
  }
}

}  // namespace

AlignmentLoss loss_and_gradients(const AlignmentParams& p, std::span<const AlignmentPair> batch,
                                 const AlignmentLossConfig& cfg, Rng* dropout_rng) {
  if (batch.empty()) throw ContractError("loss_and_gradients: empty batch");
  const DropoutSource dropout{dropout_rng, cfg.dropout};
  const std::size_t k = batch.size();

  std::vector<EncodedImage> images;
  std::vector<EncodedSentence> sentences;
  images.reserve(k);
  sentences.reserve(k);
  for (const auto& pair : batch) {
    images.push_back(embed_image(p, pair.regions, dropout));
    sentences.push_back(embed_sentence(p, pair.words, dropout));
  }

  AlignmentLoss out;
  out.scores = Matrix(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) out.scores(a, b) = score(images[a], sentences[b], cfg.score);
  out.loss = margin_loss(out.scores, cfg.margin);

  out.grads = p;
  for (auto& b : out.grads.blocks()) b.value->fill(0.0);
  const Matrix d_scores = margin_loss_grad(out.scores, cfg.margin);

  const std::size_t embed = p.embed_dim();
  std::vector<std::vector<Vec>> d_regions(k);
  std::vector<std::vector<Vec>> d_words(k);
  for (std::size_t a = 0; a < k; ++a) d_regions[a].assign(images[a].regions.size(), Vec(embed, 0.0));
  for (std::size_t b = 0; b < k; ++b) d_words[b].assign(sentences[b].words.size(), Vec(embed, 0.0));

  for (std::size_t a = 0; a < k; ++a) {
    const auto& img = images[a];
    for (std::size_t b = 0; b < k; ++b) {
      const double w = d_scores(a, b);
      if (w == 0.0) continue;
      const auto& sent = sentences[b];
      for (std::size_t t = 0; t < sent.words_out.size(); ++t) {
        const auto& st = sent.words_out[t];
        if (cfg.score == ScoreVariant::kMax) {
          const std::size_t i = best_region(img, st);
          axpy(w, st, d_regions[a][i]);
          axpy(w, img.regions[i], d_words[b][t]);
        } else {
          for (std::size_t i = 0; i < img.regions.size(); ++i) {
            if (dot(img.regions[i], st) > 0.0) {
              axpy(w, st, d_regions[a][i]);
              axpy(w, img.regions[i], d_words[b][t]);
            }
          }
        }
      }
    }
  }

  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t i = 0; i < images[a].regions.size(); ++i) {
      add_outer(out.grads.region_weight, d_regions[a][i], images[a].inputs[i]);
      axpy(1.0, d_regions[a][i], out.grads.region_bias.data());
    }
  }
  for (std::size_t b = 0; b < k; ++b) backprop_sentence(p, sentences[b], d_words[b], out.grads);
  return out;
}

Matrix score_matrix(const AlignmentParams& p, std::span<const std::span<const Vec>> images,
                    std::span<const WordIds> sentences, ScoreVariant v) {
  std::vector<EncodedImage> enc_images;
  enc_images.reserve(images.size());
  for (const auto& im : images) enc_images.push_back(embed_image(p, im));
  std::vector<EncodedSentence> enc_sentences;
  enc_sentences.reserve(sentences.size());
  for (const auto& s : sentences) enc_sentences.push_back(embed_sentence(p, s));
  Matrix out(images.size(), sentences.size());
  for (std::size_t a = 0; a < enc_images.size(); ++a)
    for (std::size_t b = 0; b < enc_sentences.size(); ++b)
      out(a, b) = score(enc_images[a], enc_sentences[b], v);
  return out;
}

std::map<std::string, double> word_magnitudes(const AlignmentParams& p, const Vocabulary& vocab,
                                              std::span<const WordIds> sentences) {
  if (sentences.empty()) throw ContractError("word_magnitudes: empty corpus");
  std::vector<double> sum(p.vocab_size(), 0.0);
  std::vector<std::size_t> occurrences(p.vocab_size(), 0);
  for (const auto& words : sentences) {
    if (words.empty()) continue;
    const auto enc = embed_sentence(p, words);
    for (std::size_t t = 0; t < words.size(); ++t) {
      sum[words[t]] += norm2(enc.words_out[t]);
      ++occurrences[words[t]];
    }
  }
  std::map<std::string, double> out;
  for (std::size_t w = 0; w < sum.size(); ++w) {
    if (occurrences[w] == 0) continue;
    out.emplace(vocab.token(w), sum[w] / static_cast<double>(occurrences[w]));
  }
  return out;
}

}  // namespace visemalign
