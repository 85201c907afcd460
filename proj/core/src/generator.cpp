#include "visemalign/generator.hpp"

#include <algorithm>
#include <cmath>

namespace visemalign {

void GeneratorHyper::validate() const {
  if (feature_dim == 0 || vocab_size == 0 || word_dim == 0 || hidden_dim == 0) {
    throw ContractError("generator hyperparameters: all dimensions must be positive");
  }
}

GeneratorParams GeneratorParams::zeros(const GeneratorHyper& hy) {
  hy.validate();
  GeneratorParams p;
  p.image_weight = Matrix(hy.hidden_dim, hy.feature_dim);
  p.word_vectors = Matrix(hy.word_dim, hy.vocab_size + 2);
  p.input_weight = Matrix(hy.hidden_dim, hy.word_dim);
  p.recurrent_weight = Matrix(hy.hidden_dim, hy.hidden_dim);
  p.hidden_bias = Matrix(hy.hidden_dim, 1);
  p.out_weight = Matrix(hy.vocab_size + 1, hy.hidden_dim);
  p.out_bias = Matrix(hy.vocab_size + 1, 1);
  p.relu_inputs = hy.relu_inputs;
  return p;
}

GeneratorParams GeneratorParams::init(const GeneratorHyper& hy, Rng& rng) {
  GeneratorParams p = zeros(hy);
  auto fill = [&](Matrix& m, double scale) {
    const double r = scale * std::sqrt(3.0 / static_cast<double>(m.cols()));
    for (double& v : m.data()) v = rng.uniform(-r, r);
  };
  fill(p.image_weight, 1.0);
  for (double& v : p.word_vectors.data()) v = rng.uniform(-0.5, 0.5);
  fill(p.input_weight, 1.0);
  fill(p.recurrent_weight, 0.5);
  return p;
}

ParamBlocks GeneratorParams::blocks() {
  return {{"image_weight", &image_weight, true},         {"word_vectors", &word_vectors, true},
          {"input_weight", &input_weight, true},         {"recurrent_weight", &recurrent_weight, true},
          {"hidden_bias", &hidden_bias, false},          {"out_weight", &out_weight, true},
          {"out_bias", &out_bias, false}};
}

Vec image_bias(const GeneratorParams& p, std::span<const double> feature) {
  return matvec(p.image_weight, feature);
}

namespace {

struct StepTrace {
  StepOutput out;
  Vec x;
  Vec word_proj;  // input_weight * x, before the optional ReLU
};

StepTrace step_traced(const GeneratorParams& p, std::span<const double> x, std::span<const double> h_prev,
                      const Vec* image_context) {
  StepTrace tr;
  tr.x.assign(x.begin(), x.end());
  tr.word_proj = matvec(p.input_weight, x);
  Vec z = p.relu_inputs ? relu(tr.word_proj) : tr.word_proj;
  axpy(1.0, matvec(p.recurrent_weight, h_prev), z);
  axpy(1.0, p.hidden_bias.data(), z);
  if (image_context != nullptr) {
    if (image_context->size() != z.size()) {
      throw ShapeError("step: image context length " + std::to_string(image_context->size()) +
                       " vs hidden size " + std::to_string(z.size()));
    }
    if (p.relu_inputs) {
      axpy(1.0, relu(*image_context), z);
    } else {
      axpy(1.0, *image_context, z);
    }
  }
  tr.out.hidden = relu(z);
  tr.out.pre = std::move(z);
  tr.out.logits = matvec(p.out_weight, tr.out.hidden);
  axpy(1.0, p.out_bias.data(), tr.out.logits);
  return tr;
}

Vec input_column(const GeneratorParams& p, std::size_t column) { return p.word_vectors.col(column); }

std::size_t argmax_lowest(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

StepOutput step(const GeneratorParams& p, std::span<const double> x, std::span<const double> h_prev,
                const Vec* image_context) {
  return step_traced(p, x, h_prev, image_context).out;
}

SequenceLoss sequence_loss(const GeneratorParams& p, std::span<const double> feature, const WordIds& target) {
  if (target.empty()) throw ContractError("sequence_loss: empty target caption");
  const std::size_t v = p.vocab_size();
  for (auto w : target) {
    if (w >= v) {
      throw ContractError("sequence_loss: word index " + std::to_string(w) + " outside vocabulary of size " +
                          std::to_string(v));
    }
  }
  const std::size_t steps = target.size() + 1;
  const std::size_t hidden = p.hidden_dim();
  const Vec bv = image_bias(p, feature);

  std::vector<StepTrace> trace;
  std::vector<std::size_t> columns;
  trace.reserve(steps);
  Vec h(hidden, 0.0);
  SequenceLoss out;
  std::vector<Vec> probs;
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t col = t == 0 ? p.start_column() : target[t - 1];
    columns.push_back(col);
    trace.push_back(step_traced(p, input_column(p, col), h, t == 0 ? &bv : nullptr));
    const std::size_t y = t < target.size() ? target[t] : p.end_class();
    const Vec lp = log_softmax(trace.back().out.logits);
    out.nll_sum -= lp[y];
    Vec pr(lp.size());
    for (std::size_t c = 0; c < lp.size(); ++c) pr[c] = std::exp(lp[c]);
    probs.push_back(std::move(pr));
    h = trace.back().out.hidden;
  }
  out.predicted = steps;
  const double scale = 1.0 / static_cast<double>(steps);
  out.loss = out.nll_sum * scale;

  GeneratorParams& g = out.grads;
  g = p;
  for (auto& b : g.blocks()) b.value->fill(0.0);

  Vec carry(hidden, 0.0);
  for (std::size_t t = steps; t-- > 0;) {
    const auto& tr = trace[t];
    const std::size_t y = t < target.size() ? target[t] : p.end_class();
    Vec dlogits = probs[t];
    dlogits[y] -= 1.0;
    for (double& d : dlogits) d *= scale;
    add_outer(g.out_weight, dlogits, tr.out.hidden);
    axpy(1.0, dlogits, g.out_bias.data());

    Vec dh = matvec_transposed(p.out_weight, dlogits);
    axpy(1.0, carry, dh);
    Vec dz(hidden);
    for (std::size_t i = 0; i < hidden; ++i) dz[i] = tr.out.pre[i] > 0.0 ? dh[i] : 0.0;

    axpy(1.0, dz, g.hidden_bias.data());
    if (t > 0) add_outer(g.recurrent_weight, dz, trace[t - 1].out.hidden);
    carry = matvec_transposed(p.recurrent_weight, dz);

    Vec dproj = dz;
    if (p.relu_inputs)
      for (std::size_t i = 0; i < hidden; ++i)
        if (!(tr.word_proj[i] > 0.0)) dproj[i] = 0.0;
    add_outer(g.input_weight, dproj, tr.x);
    g.word_vectors.add_to_col(columns[t], matvec_transposed(p.input_weight, dproj));

    if (t == 0) {
      Vec dbv = dz;
      if (p.relu_inputs)
        for (std::size_t i = 0; i < hidden; ++i)
          if (!(bv[i] > 0.0)) dbv[i] = 0.0;
      add_outer(g.image_weight, dbv, feature);
    }
  }
  return out;
}

Generated generate_greedy(const GeneratorParams& p, std::span<const double> feature, std::size_t max_len) {
  if (max_len < 1) throw ContractError("generate_greedy: max_len must be >= 1");
  const Vec bv = image_bias(p, feature);
  Generated g;
  Vec h(p.hidden_dim(), 0.0);
  std::size_t col = p.start_column();
  for (std::size_t t = 0; t < max_len; ++t) {
    auto out = step(p, input_column(p, col), h, t == 0 ? &bv : nullptr);
    const Vec lp = log_softmax(out.logits);
    const std::size_t c = argmax_lowest(lp);
    g.logprob += lp[c];
    if (c == p.end_class()) {
      g.finished = true;
      break;
    }
    g.words.push_back(c);
    col = c;
    h = std::move(out.hidden);
  }
  return g;
}

Generated generate_sample(const GeneratorParams& p, std::span<const double> feature, Rng& rng,
                          std::size_t max_len) {
  if (max_len < 1) throw ContractError("generate_sample: max_len must be >= 1");
  const Vec bv = image_bias(p, feature);
  Generated g;
  Vec h(p.hidden_dim(), 0.0);
  std::size_t col = p.start_column();
  for (std::size_t t = 0; t < max_len; ++t) {
    auto out = step(p, input_column(p, col), h, t == 0 ? &bv : nullptr);
    const Vec lp = log_softmax(out.logits);
    const std::size_t c = rng.categorical(softmax(out.logits));
    g.logprob += lp[c];
    if (c == p.end_class()) {
      g.finished = true;
      break;
    }
    g.words.push_back(c);
    col = c;
    h = std::move(out.hidden);
  }
  return g;
}

namespace {

struct Hypothesis {
  Generated seq;
  Vec hidden;
};

// Descending log-probability, then lexicographic tokens with END appended
// to finished sequences.
bool ranks_before(const Generated& a, const Generated& b, std::size_t end_class) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  const std::size_t na = a.words.size() + (a.finished ? 1 : 0);
  const std::size_t nb = b.words.size() + (b.finished ? 1 : 0);
  for (std::size_t i = 0; i < std::min(na, nb); ++i) {
    const std::size_t ta = i < a.words.size() ? a.words[i] : end_class;
    const std::size_t tb = i < b.words.size() ? b.words[i] : end_class;
    if (ta != tb) return ta < tb;
  }
  return na < nb;
}

}  // namespace

std::vector<Generated> beam_search(const GeneratorParams& p, std::span<const double> feature, std::size_t beam,
                                   std::size_t max_len) {
  if (beam < 1) throw ContractError("beam_search: beam must be >= 1");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");
  const std::size_t end = p.end_class();
  const Vec bv = image_bias(p, feature);
  auto order = [end](const Generated& a, const Generated& b) { return ranks_before(a, b, end); };

  std::vector<Hypothesis> live{{Generated{}, Vec(p.hidden_dim(), 0.0)}};
  std::vector<Generated> retired;

  for (std::size_t t = 0; t < max_len && !live.empty(); ++t) {
    struct Candidate {
      Generated seq;
      std::size_t parent;
    };
    std::vector<Candidate> cands;
    std::vector<Vec> hiddens;
    hiddens.reserve(live.size());
    for (std::size_t k = 0; k < live.size(); ++k) {
      const auto& hyp = live[k];
      const std::size_t col = hyp.seq.words.empty() ? p.start_column() : hyp.seq.words.back();
      auto out = step(p, input_column(p, col), hyp.hidden, t == 0 ? &bv : nullptr);
      const Vec lp = log_softmax(out.logits);
      hiddens.push_back(std::move(out.hidden));
      for (std::size_t c = 0; c < lp.size(); ++c) {
        Candidate cand{hyp.seq, k};
        cand.seq.logprob += lp[c];
        if (c == end) {
          cand.seq.finished = true;
        } else {
          cand.seq.words.push_back(c);
        }
        cands.push_back(std::move(cand));
      }
    }
    const std::size_t keep = std::min(beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [&](const Candidate& a, const Candidate& b) { return order(a.seq, b.seq); });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      if (cands[i].seq.finished) {
        retired.push_back(std::move(cands[i].seq));
      } else {
        next.push_back({std::move(cands[i].seq), hiddens[cands[i].parent]});
      }
    }
    live = std::move(next);
  }

  std::vector<Generated> all = std::move(retired);
  for (auto& h : live) all.push_back(std::move(h.seq));
  std::sort(all.begin(), all.end(), order);
  if (all.size() > beam) all.resize(beam);
  return all;
}

Vec init_output_bias(std::span<const double> counts) {
  if (counts.empty()) throw ContractError("init_output_bias: no classes");
  double total = 0.0;
  for (double c : counts) {
    if (c < 0.0) throw ContractError("init_output_bias: negative count");
    total += c;
  }
  if (!(total > 0.0)) throw ContractError("init_output_bias: total count is zero");
  const double smoothed_total = total + static_cast<double>(counts.size());
  Vec b(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) b[i] = std::log((counts[i] + 1.0) / smoothed_total);
  return b;
}

Vec output_class_counts(std::span<const WordIds> captions, std::size_t vocab_size) {
  Vec counts(vocab_size + 1, 0.0);
  for (const auto& c : captions) {
    for (auto w : c) {
      if (w >= vocab_size) throw ContractError("output_class_counts: word index out of range");
      counts[w] += 1.0;
    }
    counts[vocab_size] += 1.0;
  }
  return counts;
}

}  // namespace visemalign
