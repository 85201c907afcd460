#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "visemalign/serialization.hpp"
#include "visemalign/training.hpp"

namespace visemalign::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Option plumbing: every tunable is a flag, and `--config file.json` may set
// any of them by its key. Flags given on the command line win.

class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file setting any option by key");
  }

  template <class T>
  CLI::Option* add(const std::string& flag, T& var, const std::string& help) {
    const std::string key = key_of(flag);
    auto* opt = app_->add_option(flag, var, help)->capture_default_str();
    bind(opt, key, var);
    return opt;
  }

  CLI::Option* flag(const std::string& flag, bool& var, const std::string& help) {
    auto* opt = app_->add_flag(flag, var, help);
    bind(opt, key_of(flag), var);
    return opt;
  }

  // Keys excluded from the provenance record (paths that name where outputs go).
  void exclude_from_provenance(const std::string& flag) { hidden_.insert(key_of(flag)); }

  void resolve() {
    if (config_path_.empty()) return;
    json j;
    try {
      j = json::parse(read_text_file(config_path_));
    } catch (const json::exception& e) {
      throw InputError(config_path_ + ": " + e.what());
    }
    if (!j.is_object()) throw InputError(config_path_ + ": config must be a JSON object");
    for (auto& b : bindings_) {
      if (b.opt->count() > 0 || !j.contains(b.key)) continue;
      try {
        b.load(j.at(b.key));
      } catch (const json::exception& e) {
        throw InputError(config_path_ + ": key '" + b.key + "': " + e.what());
      }
    }
  }

  std::string provenance_json() const {
    json j = json::object();
    for (const auto& b : bindings_)
      if (!hidden_.contains(b.key)) b.store(j[b.key]);
    return j.dump();
  }

 private:
  struct Binding {
    CLI::Option* opt;
    std::string key;
    std::function<void(const json&)> load;
    std::function<void(json&)> store;
  };

  static std::string key_of(std::string flag) {
    flag.erase(0, flag.find_first_not_of('-'));
    std::replace(flag.begin(), flag.end(), '-', '_');
    return flag;
  }

  template <class T>
  void bind(CLI::Option* opt, const std::string& key, T& var) {
    bindings_.push_back({opt, key, [&var](const json& j) { var = j.get<T>(); }, [&var](json& j) { j = var; }});
  }

  CLI::App* app_;
  std::string config_path_;
  std::vector<Binding> bindings_;
  std::set<std::string> hidden_;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  void warn(const std::string& msg) const { err << "warning: " << msg << "\n"; }
};

// ---------------------------------------------------------------------------
// Shared helpers

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_header(const Provenance& prov) {
  return "# config " + prov.config_json + "\n# seed " + std::to_string(prov.seed) + "\nepoch,loss\n";
}

// Parses a file, turning any parse or validation failure into an InputError
// that names the path.
template <class F>
auto load_input(const std::string& path, const std::string& what, F&& parse) {
  if (path.empty()) throw InputError("missing required " + what + " path");
  try {
    return parse(read_text_file(path));
  } catch (const InputError& e) {
    const std::string msg = e.what();
    throw InputError(msg.find(path) == std::string::npos ? path + ": " + msg : msg);
  } catch (const ContractError& e) {
    throw InputError(path + ": " + e.what());
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

DatasetManifest read_manifest(const std::string& path) {
  return load_input(path, "manifest", [](const std::string& text) {
    auto m = manifest_from_json(text);
    m.validate();
    return m;
  });
}

std::vector<const ImageItem*> select_items(const DatasetManifest& m, const std::string& split) {
  if (split == "all") {
    std::vector<const ImageItem*> all;
    for (const auto& it : m.items) all.push_back(&it);
    return all;
  }
  return m.items_in(parse_split(split));
}

std::vector<Tokens> train_sentences(const DatasetManifest& m) {
  std::vector<Tokens> s;
  for (const auto* it : m.items_in(Split::kTrain))
    for (const auto& t : it->sentences) s.push_back(t);
  return s;
}

void write_json(const fs::path& path, const json& j, const Io& io) {
  write_text_file(path, j.dump(2) + "\n");
  io.out << "wrote " << path.string() << "\n";
}

void write_text(const fs::path& path, const std::string& text, const Io& io) {
  write_text_file(path, text);
  io.out << "wrote " << path.string() << "\n";
}

// Images and encoded sentences of one split, ready for ranking. Sentences
// left empty by OOV dropping are skipped with a warning.
struct RankSet {
  std::vector<std::span<const Vec>> images;
  std::vector<WordIds> sentences;
  std::vector<TruthPair> truth;
};

RankSet rank_set(const std::vector<const ImageItem*>& items, const Vocabulary& vocab, const Io& io) {
  RankSet rs;
  for (const auto* it : items) {
    const std::size_t image = rs.images.size();
    for (std::size_t s = 0; s < it->sentences.size(); ++s) {
      auto ids = encode_sentence(vocab, it->sentences[s], OovPolicy::kDrop);
      if (ids.empty()) {
        io.warn("image '" + it->id + "' sentence " + std::to_string(s) + " is empty after OOV dropping; skipped");
        continue;
      }
      rs.truth.emplace_back(image, rs.sentences.size());
      rs.sentences.push_back(std::move(ids));
    }
    rs.images.emplace_back(it->regions);
  }
  return rs;
}

std::optional<RankReport> rank_split(const AlignmentParams& p, ScoreVariant v, const RankSet& rs,
                                     std::span<const std::size_t> ks) {
  if (rs.sentences.empty() || rs.images.empty()) return std::nullopt;
  // An image whose sentences were all skipped has no ground truth; drop it.
  std::set<std::size_t> owned;
  for (const auto& [i, s] : rs.truth) owned.insert(i);
  if (owned.size() != rs.images.size()) {
    RankSet kept;
    std::map<std::size_t, std::size_t> remap;
    for (std::size_t i = 0; i < rs.images.size(); ++i)
      if (owned.contains(i)) {
        remap[i] = kept.images.size();
        kept.images.push_back(rs.images[i]);
      }
    kept.sentences = rs.sentences;
    for (const auto& [i, s] : rs.truth) kept.truth.emplace_back(remap.at(i), s);
    return rank_split(p, v, kept, ks);
  }
  const Matrix scores = score_matrix(p, rs.images, rs.sentences, v);
  return rank_eval(scores, rs.truth, ks);
}

json rank_json(const RankReport& r) {
  json j = json::parse(rank_report_to_json(r, Provenance{}));
  j.erase("provenance");
  return j;
}

void print_rank_table(const RankReport& r, std::span<const std::size_t> ks, const Io& io) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "";
  for (auto k : ks) os << std::right << std::setw(8) << ("R@" + std::to_string(k));
  os << std::setw(8) << "Med r" << "\n";
  auto row = [&](const char* name, const RankingResult& d) {
    os << std::left << std::setw(12) << name << std::right << std::fixed << std::setprecision(1);
    for (auto k : ks) os << std::setw(8) << d.recall.at(k);
    os << std::setw(8) << d.median_rank << "\n";
  };
  row("annotation", r.annotation);
  row("search", r.search);
  io.out << os.str();
}

struct OptimizerFlags {
  std::string optimizer = "sgd";
  OptimizerConfig cfg;

  explicit OptimizerFlags(OptimizerConfig defaults) : cfg(defaults) {
    optimizer = std::string(to_string(defaults.kind));
  }

  void add(Options& o) {
    o.add("--optimizer", optimizer, "sgd | rmsprop");
    o.add("--learning-rate", cfg.learning_rate, "step size");
    o.add("--momentum", cfg.momentum, "SGD momentum");
    o.add("--decay-rate", cfg.decay_rate, "RMSprop running-average decay");
    o.add("--epsilon", cfg.epsilon, "RMSprop denominator floor");
    o.add("--weight-decay", cfg.weight_decay, "L2 penalty on weight matrices");
    o.add("--clip", cfg.clip, "elementwise gradient clip");
    o.add("--batch-size", cfg.batch_size, "minibatch size");
    o.add("--epochs", cfg.epochs, "training epochs");
    o.add("--seed", cfg.seed, "seed for init, shuffling and dropout");
  }

  OptimizerConfig resolved() {
    cfg.kind = parse_optimizer(optimizer);
    cfg.validate();
    return cfg;
  }
};

EpochCallback progress(const Io& io, std::size_t every, std::size_t total) {
  return [&io, every, total](std::size_t epoch, double loss) {
    if ((every > 0 && epoch % every == 0) || epoch == total) io.out << "epoch " << epoch << " loss " << fmt(loss) << "\n";
    return true;
  };
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmd {
  std::size_t images = 20, regions = 3, concepts = 12, feature_dim = 12, val = 0, test = 0;
  double noise = 0.05;
  std::uint64_t seed = 7;
  std::string out = ".";

  void add(Options& o) {
    o.add("--images", images, "number of images");
    o.add("--regions", regions, "object regions per image");
    o.add("--concepts", concepts, "distinct concept words");
    o.add("--feature-dim", feature_dim, "region feature length");
    o.add("--noise", noise, "feature noise amplitude");
    o.add("--val", val, "trailing images assigned to the val split (before test)");
    o.add("--test", test, "trailing images assigned to the test split");
    o.add("--seed", seed, "generator seed");
    o.add("--out", out, "output directory");
    o.exclude_from_provenance("--out");
  }

  int run(const Options& o, const Io& io) {
    if (val + test > images) throw InputError("--val + --test exceeds --images");
    Rng rng(seed);
    SynthDataset ds = synth_dataset(rng, images, regions, concepts, feature_dim, noise);
    const std::size_t first_test = images - test, first_val = first_test - val;
    for (std::size_t i = first_val; i < images; ++i)
      ds.manifest.items[i].split = i >= first_test ? Split::kTest : Split::kVal;

    const Provenance prov{o.provenance_json(), seed};
    json m = json::parse(manifest_to_json(ds.manifest));
    m["provenance"] = {{"config", json::parse(prov.config_json)}, {"seed", prov.seed}};
    write_json(fs::path(out) / "manifest.json", m, io);

    json truth = json::array();
    for (const auto& t : ds.truth)
      truth.push_back({{"image_id", ds.manifest.items[t.image].id},
                       {"sentence_index", t.sentence},
                       {"position", t.position},
                       {"region", t.region},
                       {"word", t.word}});
    json tj{{"provenance", m["provenance"]},
            {"concept_words", ds.concept_words},
            {"filler_words", ds.filler_words},
            {"truth", truth}};
    write_json(fs::path(out) / "truth.json", tj, io);
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// train-align

struct TrainAlignCmd {
  std::string manifest, out = ".", score = "max";
  std::size_t min_count = 1, log_every = 0;
  AlignmentHyper hyper;
  OptimizerFlags opt{OptimizerConfig{}};

  void add(Options& o) {
    o.add("--manifest", manifest, "dataset manifest JSON");
    o.add("--out", out, "output directory");
    o.exclude_from_provenance("--out");
    o.add("--min-count", min_count, "minimum training-word count for the vocabulary");
    o.add("--embed-dim", hyper.embed_dim, "joint embedding size");
    o.add("--hidden-dim", hyper.hidden_dim, "BRNN hidden size");
    o.add("--word-dim", hyper.word_dim, "word vector size");
    o.add("--margin", hyper.loss.margin, "ranking margin");
    o.add("--score", score, "max | sum");
    o.add("--dropout", hyper.loss.dropout, "training dropout rate");
    o.add("--log-every", log_every, "print the loss every N epochs (0: final only)");
    o.exclude_from_provenance("--log-every");
    opt.add(o);
  }

  int run(const Options& o, const Io& io) {
    const DatasetManifest m = read_manifest(manifest);
    const auto train = m.items_in(Split::kTrain);
    if (train.empty()) throw InputError(manifest + ": manifest has no train split");
    const OptimizerConfig cfg = opt.resolved();
    hyper.loss.score = parse_score_variant(score);

    AlignmentCheckpoint ckpt;
    ckpt.vocab = build_vocabulary(train_sentences(m), min_count);
    hyper.feature_dim = m.feature_dim;
    hyper.vocab_size = ckpt.vocab.word_count();
    hyper.validate();
    ckpt.hyper = hyper;
    ckpt.provenance = {o.provenance_json(), cfg.seed};

    const RankSet train_set = rank_set(train, ckpt.vocab, io);
    if (train_set.sentences.empty()) throw InputError(manifest + ": no training sentence survives the vocabulary");
    std::vector<AlignmentPair> pairs;
    for (const auto& [i, s] : train_set.truth) pairs.push_back({train_set.images[i], train_set.sentences[s]});

    auto trained = train_alignment(hyper, pairs, cfg, progress(io, log_every, cfg.epochs));
    ckpt.params = std::move(trained.params);

    const fs::path dir(out);
    write_text(dir / "align_checkpoint.json", checkpoint_to_json(ckpt), io);
    std::string csv = csv_header(ckpt.provenance);
    for (std::size_t e = 0; e < trained.log.epoch_loss.size(); ++e)
      csv += std::to_string(e + 1) + "," + fmt(trained.log.epoch_loss[e]) + "\n";
    write_text(dir / "align_loss.csv", csv, io);

    const std::vector<std::size_t> ks{1, 5, 10};
    json metrics{{"provenance", {{"config", json::parse(ckpt.provenance.config_json)}, {"seed", cfg.seed}}},
                 {"final_loss", trained.log.epoch_loss.back()}};
    if (auto r = rank_split(ckpt.params, hyper.loss.score, train_set, ks)) {
      metrics["train"] = rank_json(*r);
      io.out << "train split\n";
      print_rank_table(*r, ks, io);
    }
    const auto val = m.items_in(Split::kVal);
    if (!val.empty()) {
      if (auto r = rank_split(ckpt.params, hyper.loss.score, rank_set(val, ckpt.vocab, io), ks)) {
        metrics["val"] = rank_json(*r);
        io.out << "val split\n";
        print_rank_table(*r, ks, io);
      }
    }
    write_json(dir / "align_metrics.json", metrics, io);
    return kExitOk;
  }
};

AlignmentCheckpoint read_align_checkpoint(const std::string& path) {
  return load_input(path, "checkpoint", [](const std::string& t) { return alignment_checkpoint_from_json(t); });
}

// The checkpoint's vocabulary must be the one its training run would build
// from this manifest's train split.
void check_vocab(const AlignmentCheckpoint& c, const DatasetManifest& m, const std::string& manifest_path) {
  if (m.items_in(Split::kTrain).empty()) return;
  std::size_t min_count = 1;
  const json cfg = json::parse(c.provenance.config_json);
  if (cfg.contains("min_count")) min_count = cfg.at("min_count").get<std::size_t>();
  if (!(build_vocabulary(train_sentences(m), min_count) == c.vocab))
    throw InputError(manifest_path + ": vocabulary mismatch between checkpoint and manifest train split");
}

// ---------------------------------------------------------------------------
// decode-align

struct DecodeAlignCmd {
  std::string checkpoint, manifest, out = ".", split = "all";
  double beta = 1.0;

  void add(Options& o) {
    o.add("--checkpoint", checkpoint, "alignment checkpoint JSON");
    o.add("--manifest", manifest, "dataset manifest JSON");
    o.add("--beta", beta, "segment-continuity bonus (0: per-word argmax)");
    o.add("--split", split, "train | val | test | all");
    o.add("--out", out, "output directory");
    o.exclude_from_provenance("--out");
  }

  int run(const Options& o, const Io& io) {
    const AlignmentCheckpoint c = read_align_checkpoint(checkpoint);
    const DatasetManifest m = read_manifest(manifest);
    if (m.feature_dim != c.hyper.feature_dim)
      throw InputError(manifest + ": feature_dim " + std::to_string(m.feature_dim) + " does not match checkpoint " +
                       std::to_string(c.hyper.feature_dim));
    check_vocab(c, m, manifest);
    if (!(beta >= 0.0)) throw InputError("--beta must be non-negative");

    std::vector<AlignmentDump> dumps;
    std::size_t segments_total = 0;
    for (const auto* it : select_items(m, split)) {
      const EncodedImage img = embed_image(c.params, it->regions);
      for (std::size_t s = 0; s < it->sentences.size(); ++s) {
        auto enc = encode_with_tokens(c.vocab, it->sentences[s], OovPolicy::kDrop);
        if (enc.ids.empty()) {
          io.warn("image '" + it->id + "' sentence " + std::to_string(s) + " is empty after OOV dropping; skipped");
          continue;
        }
        const EncodedSentence sent = embed_sentence(c.params, enc.ids);
        AlignmentDump d{it->id, s, std::move(enc.tokens), decode(ScoreGrid::from_encoded(img, sent), beta)};
        segments_total += segments(d.path).size();
        dumps.push_back(std::move(d));
      }
    }
    write_text(fs::path(out) / "alignments.json",
               alignment_dumps_to_json(dumps, beta, Provenance{o.provenance_json(), c.provenance.seed}), io);
    io.out << "decoded " << dumps.size() << " sentences, " << segments_total << " segments\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// train-gen

struct TrainGenCmd {
  std::string manifest, alignments, out = ".", source = "fullframe";
  std::size_t min_count = 1, log_every = 0;
  GeneratorHyper hyper;
  OptimizerFlags opt{[] {
    OptimizerConfig c;
    c.kind = OptimizerKind::kRmsprop;
    c.learning_rate = 2e-3;
    return c;
  }()};

  void add(Options& o) {
    o.add("--manifest", manifest, "dataset manifest JSON");
    o.add("--source", source, "fullframe | region");
    o.add("--alignments", alignments, "decode-align output (region source)");
    o.add("--out", out, "output directory");
    o.exclude_from_provenance("--out");
    o.add("--min-count", min_count, "minimum training-word count for the vocabulary");
    o.add("--word-dim", hyper.word_dim, "word vector size");
    o.add("--hidden-dim", hyper.hidden_dim, "recurrent hidden size");
    o.flag("--relu-inputs", hyper.relu_inputs, "rectify word and image inputs");
    o.add("--log-every", log_every, "print the loss every N epochs (0: final only)");
    o.exclude_from_provenance("--log-every");
    opt.add(o);
  }

  int run(const Options& o, const Io& io) {
    const CaptionSource src = parse_caption_source(source);
    if (src == CaptionSource::kRegion && alignments.empty())
      throw InputError("region source needs --alignments; run decode-align first");
    const DatasetManifest m = read_manifest(manifest);
    const auto train = m.items_in(Split::kTrain);
    if (train.empty()) throw InputError(manifest + ": manifest has no train split");
    const OptimizerConfig cfg = opt.resolved();

    GeneratorCheckpoint ckpt;
    ckpt.vocab = build_vocabulary(train_sentences(m), min_count);
    ckpt.source = src;
    hyper.feature_dim = m.feature_dim;
    hyper.vocab_size = ckpt.vocab.word_count();
    hyper.validate();
    ckpt.hyper = hyper;
    ckpt.provenance = {o.provenance_json(), cfg.seed};

    std::vector<CaptionExample> examples;
    auto push = [&](std::span<const double> feature, const Tokens& words, const std::string& where) {
      auto ids = encode_sentence(ckpt.vocab, words, OovPolicy::kDrop);
      if (ids.empty()) {
        io.warn(where + " is empty after OOV dropping; skipped");
        return;
      }
      examples.push_back({feature, std::move(ids)});
    };
    if (src == CaptionSource::kFullframe) {
      for (const auto* it : train)
        for (std::size_t s = 0; s < it->sentences.size(); ++s)
          push(it->regions[0], it->sentences[s], "image '" + it->id + "' sentence " + std::to_string(s));
    } else {
      const auto dumps = load_input(alignments, "alignments", [](const std::string& t) { return alignment_dumps_from_json(t); });
      for (const auto& d : dumps) {
        const ImageItem* it = m.find(d.image_id);
        if (it == nullptr) throw InputError(alignments + ": image '" + d.image_id + "' is not in " + manifest);
        if (it->split != Split::kTrain) continue;
        for (const auto& seg : segments(d.path)) {
          if (seg.region >= it->regions.size() || seg.end >= d.tokens.size())
            throw InputError(alignments + ": segment out of range for image '" + d.image_id + "'");
          const Tokens words(d.tokens.begin() + static_cast<std::ptrdiff_t>(seg.start),
                             d.tokens.begin() + static_cast<std::ptrdiff_t>(seg.end) + 1);
          push(it->regions[seg.region], words, "image '" + d.image_id + "' segment " + std::to_string(seg.start));
        }
      }
    }
    if (examples.empty()) throw InputError(manifest + ": no training caption survives the vocabulary");

    auto trained = train_generator(hyper, examples, cfg, progress(io, log_every, cfg.epochs));
    ckpt.params = std::move(trained.params);

    const fs::path dir(out);
    write_text(dir / "gen_checkpoint.json", checkpoint_to_json(ckpt), io);
    std::string csv = csv_header(ckpt.provenance) + "0," + fmt(trained.initial_loss) + "\n";
    for (std::size_t e = 0; e < trained.log.epoch_loss.size(); ++e)
      csv += std::to_string(e + 1) + "," + fmt(trained.log.epoch_loss[e]) + "\n";
    write_text(dir / "gen_loss.csv", csv, io);

    json metrics{{"provenance", {{"config", json::parse(ckpt.provenance.config_json)}, {"seed", cfg.seed}}},
                 {"training_captions", examples.size()},
                 {"initial_loss", trained.initial_loss},
                 {"final_loss", trained.log.epoch_loss.back()}};
    if (src == CaptionSource::kFullframe) {
      std::vector<CaptionExample> val;
      for (const auto* it : m.items_in(Split::kVal))
        for (const auto& s : it->sentences) {
          auto ids = encode_sentence(ckpt.vocab, s, OovPolicy::kDrop);
          if (!ids.empty()) val.push_back({it->regions[0], std::move(ids)});
        }
      if (!val.empty()) metrics["val_loss"] = caption_loss(ckpt.params, val);
    }
    write_json(dir / "gen_metrics.json", metrics, io);
    io.out << "initial loss " << fmt(trained.initial_loss) << " final loss " << fmt(trained.log.epoch_loss.back())
           << "\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// generate

struct GenerateCmd {
  std::string checkpoint, manifest, out = ".", split = "test", file = "captions.jsonl";
  std::size_t beam = 7, max_len = 20;
  bool greedy = false;

  void add(Options& o) {
    o.add("--checkpoint", checkpoint, "generator checkpoint JSON");
    o.add("--manifest", manifest, "dataset manifest JSON");
    o.add("--split", split, "train | val | test | all");
    o.add("--beam", beam, "beam width");
    o.add("--max-len", max_len, "maximum emitted tokens, END included");
    o.flag("--greedy", greedy, "argmax decoding instead of beam search");
    o.add("--out", out, "output directory");
    o.add("--file", file, "output file name inside --out");
    o.exclude_from_provenance("--out");
    o.exclude_from_provenance("--file");
  }

  int run(const Options& o, const Io& io) {
    const auto c = load_input(checkpoint, "checkpoint", [](const std::string& t) { return generator_checkpoint_from_json(t); });
    const DatasetManifest m = read_manifest(manifest);
    if (m.feature_dim != c.hyper.feature_dim)
      throw InputError(manifest + ": feature_dim " + std::to_string(m.feature_dim) + " does not match checkpoint " +
                       std::to_string(c.hyper.feature_dim));
    if (beam == 0) throw InputError("--beam must be positive");
    if (max_len == 0) throw InputError("--max-len must be positive");

    std::ostringstream lines;
    lines << json{{"provenance", {{"config", json::parse(o.provenance_json())}, {"seed", c.provenance.seed}}}}.dump()
          << "\n";
    auto emit = [&](const std::string& id, std::optional<std::size_t> region, std::span<const double> feature) {
      const Generated g = greedy ? generate_greedy(c.params, feature, max_len)
                                 : beam_search(c.params, feature, beam, max_len).front();
      Tokens tokens;
      for (auto w : g.words) tokens.push_back(c.vocab.token(w));
      json j{{"image_id", id}, {"tokens", tokens}, {"logprob", g.logprob}};
      if (region) j["region"] = *region;
      lines << j.dump() << "\n";
    };
    std::size_t n = 0;
    for (const auto* it : select_items(m, split)) {
      if (c.source == CaptionSource::kFullframe) {
        emit(it->id, std::nullopt, it->regions[0]);
        ++n;
      } else {
        for (std::size_t r = 1; r < it->regions.size(); ++r, ++n) emit(it->id, r, it->regions[r]);
      }
    }
    write_text(fs::path(out) / file, lines.str(), io);
    io.out << "generated " << n << " captions\n";
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// eval-rank

struct EvalRankCmd {
  std::string checkpoint, manifest, out = ".", split = "test";
  std::vector<std::size_t> ks{1, 5, 10};

  void add(Options& o) {
    o.add("--checkpoint", checkpoint, "alignment checkpoint JSON");
    o.add("--manifest", manifest, "dataset manifest JSON");
    o.add("--split", split, "train | val | test | all");
    o.add("--ks", ks, "recall cut-offs")->delimiter(',');
    o.add("--out", out, "output directory");
    o.exclude_from_provenance("--out");
  }

  int run(const Options& o, const Io& io) {
    const AlignmentCheckpoint c = read_align_checkpoint(checkpoint);
    const DatasetManifest m = read_manifest(manifest);
    if (m.feature_dim != c.hyper.feature_dim)
      throw InputError(manifest + ": feature_dim does not match checkpoint");
    check_vocab(c, m, manifest);
    if (ks.empty() || std::find(ks.begin(), ks.end(), 0u) != ks.end()) throw InputError("--ks must be positive");
    const auto items = select_items(m, split);
    if (items.empty()) throw InputError(manifest + ": split '" + split + "' is empty");
    const auto r = rank_split(c.params, c.hyper.loss.score, rank_set(items, c.vocab, io), ks);
    if (!r) throw InputError(manifest + ": no sentence of split '" + split + "' survives the vocabulary");
    print_rank_table(*r, ks, io);
    write_text(fs::path(out) / "rank_report.json",
               rank_report_to_json(*r, Provenance{o.provenance_json(), c.provenance.seed}) + "\n", io);
    return kExitOk;
  }
};

// ---------------------------------------------------------------------------
// eval-caption

struct EvalCaptionCmd {
  std::string predictions, manifest, out = ".", split = "test";
  std::size_t max_n = 4;

  void add(Options& o) {
    o.add("--predictions", predictions, "generate output (JSON lines)");
    o.add("--manifest", manifest, "dataset manifest JSON with reference captions");
    o.add("--split", split, "train | val | test | all");
    o.add("--max-n", max_n, "highest BLEU order");
    o.add("--out", out, "output directory");
    o.exclude_from_provenance("--out");
  }

  int run(const Options& o, const Io& io) {
    const DatasetManifest m = read_manifest(manifest);
    if (max_n == 0) throw InputError("--max-n must be positive");
    std::map<std::string, Tokens> pred;
    std::uint64_t seed = 0;
    load_input(predictions, "predictions", [&](const std::string& text) {
      std::istringstream in(text);
      std::string line;
      for (std::size_t no = 1; std::getline(in, line); ++no) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        if (j.contains("provenance")) {
          seed = j.at("provenance").value("seed", std::uint64_t{0});
          continue;
        }
        if (j.contains("region"))
          throw InputError("line " + std::to_string(no) + ": region-level predictions have no reference captions");
        const auto id = j.at("image_id").get<std::string>();
        if (!pred.emplace(id, j.at("tokens").get<Tokens>()).second)
          throw InputError("line " + std::to_string(no) + ": duplicate prediction for '" + id + "'");
      }
      return 0;
    });

    const auto items = select_items(m, split);
    if (items.empty()) throw InputError(manifest + ": split '" + split + "' is empty");
    std::vector<std::string> missing, unknown;
    std::set<std::string> wanted;
    for (const auto* it : items) {
      wanted.insert(it->id);
      if (!pred.contains(it->id)) missing.push_back(it->id);
    }
    for (const auto& [id, t] : pred)
      if (!wanted.contains(id)) unknown.push_back(id);
    auto join = [](const std::vector<std::string>& v) {
      std::string s;
      for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
      return s;
    };
    if (!missing.empty() || !unknown.empty()) {
      std::string msg = predictions + ": ids do not match split '" + split + "' of " + manifest;
      if (!missing.empty()) msg += "; missing predictions: " + join(missing);
      if (!unknown.empty()) msg += "; unknown ids: " + join(unknown);
      throw InputError(msg);
    }

    CaptionReport report;
    std::vector<BleuExample> scored;
    std::vector<Tokens> generated;
    std::size_t empty = 0;
    for (const auto* it : items) {
      const Tokens& cand = pred.at(it->id);
      generated.push_back(cand);
      if (cand.empty()) {
        ++empty;
        continue;
      }
      scored.push_back({cand, it->sentences});
    }
    report.evaluated = scored.size();
    for (std::size_t n = 1; n <= max_n; ++n) report.bleu[n] = scored.empty() ? 0.0 : corpus_bleu(scored, n);
    const auto train = train_sentences(m);
    const auto novelty = novelty_rate(generated, train);
    report.novelty_rate = novelty.rate;
    std::string warning;
    if (empty > 0) warning = std::to_string(empty) + " empty generated caption(s) excluded from BLEU";
    if (novelty.warning) warning += (warning.empty() ? "" : "; ") + *novelty.warning;
    if (!warning.empty()) {
      report.warning = warning;
      io.warn(warning);
    }

    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    for (std::size_t n = 1; n <= max_n; ++n) os << std::setw(8) << ("B-" + std::to_string(n));
    os << std::setw(10) << "novelty" << "\n";
    for (std::size_t n = 1; n <= max_n; ++n) os << std::setw(8) << report.bleu.at(n);
    os << std::setw(9) << 100.0 * report.novelty_rate << "%\n";
    io.out << os.str();
    write_text(fs::path(out) / "caption_report.json",
               caption_report_to_json(report, Provenance{o.provenance_json(), seed}) + "\n", io);
    return kExitOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Io io{out, err};
  CLI::App app{"Image-sentence alignment and caption generation", "visemalign"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* app;
    std::unique_ptr<Options> opts;
    std::function<int(const Options&, const Io&)> run;
  };
  std::vector<Sub> subs;
  auto reg = [&](const char* name, const char* help, auto& cmd) {
    auto* sub = app.add_subcommand(name, help);
    auto opts = std::make_unique<Options>(sub);
    cmd.add(*opts);
    subs.push_back({sub, std::move(opts), [&cmd](const Options& o, const Io& i) { return cmd.run(o, i); }});
  };
  SynthCmd synth;
  TrainAlignCmd train_align;
  DecodeAlignCmd decode_align;
  TrainGenCmd train_gen;
  GenerateCmd generate;
  EvalRankCmd eval_rank;
  EvalCaptionCmd eval_caption;
  reg("synth", "write a synthetic fixture manifest and its ground-truth table", synth);
  reg("train-align", "train the image-sentence embedding model", train_align);
  reg("decode-align", "decode word-to-region alignments", decode_align);
  reg("train-gen", "train the caption generator", train_gen);
  reg("generate", "caption images with a trained generator", generate);
  reg("eval-rank", "image annotation and search recall", eval_rank);
  reg("eval-caption", "BLEU and novelty of generated captions", eval_caption);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }

  try {
    for (auto& s : subs) {
      if (!s.app->parsed()) continue;
      s.opts->resolve();
      return s.run(*s.opts, io);
    }
    return kExitInput;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const OovError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ContractError& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitInput;
  } catch (const json::exception& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "input error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace visemalign::cli
