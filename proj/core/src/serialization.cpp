#include "visemalign/serialization.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace visemalign {

using json = nlohmann::ordered_json;

namespace {

json parse_or_throw(std::string_view text, std::string_view what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw InputError(std::string(what) + ": invalid JSON: " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, std::string_view what) {
  if (!j.is_object() || !j.contains(key)) throw InputError(std::string(what) + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InputError(std::string(what) + ": bad field '" + key + "': " + e.what());
  }
}

json matrix_to_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  j["data"] = std::vector<double>(m.data().begin(), m.data().end());
  return j;
}

Matrix matrix_from_json(const json& j, std::string_view what) {
  const auto rows = field<std::size_t>(j, "rows", what);
  const auto cols = field<std::size_t>(j, "cols", what);
  auto data = field<std::vector<double>>(j, "data", what);
  if (data.size() != rows * cols) throw InputError(std::string(what) + ": data length does not match rows x cols");
  if (!all_finite(data)) throw InputError(std::string(what) + ": non-finite parameter values");
  return Matrix(rows, cols, std::move(data));
}

json params_to_json(const ParamBlocks& blocks) {
  json j = json::object();
  for (const auto& b : blocks) j[std::string(b.name)] = matrix_to_json(*b.value);
  return j;
}

void params_from_json(const json& j, const ParamBlocks& blocks, std::string_view what) {
  for (const auto& b : blocks) {
    const std::string name(b.name);
    if (!j.contains(name)) throw InputError(std::string(what) + ": missing parameter '" + name + "'");
    Matrix m = matrix_from_json(j.at(name), std::string(what) + "." + name);
    if (!m.same_shape(*b.value)) {
      throw InputError(std::string(what) + ": parameter '" + name + "' has shape " + m.shape_string() +
                       ", expected " + b.value->shape_string());
    }
    *b.value = std::move(m);
  }
}

json vocab_json(const Vocabulary& v) {
  json j;
  j["tokens"] = v.tokens();
  j["counts"] = v.counts();
  j["start_index"] = v.start_index();
  j["end_index"] = v.end_index();
  return j;
}

Vocabulary vocab_from(const json& j) {
  try {
    return Vocabulary(field<std::vector<std::string>>(j, "tokens", "vocabulary"),
                      field<std::vector<std::size_t>>(j, "counts", "vocabulary"),
                      field<std::size_t>(j, "start_index", "vocabulary"),
                      field<std::size_t>(j, "end_index", "vocabulary"));
  } catch (const ContractError& e) {
    throw InputError(e.what());
  }
}

json provenance_json(const Provenance& p) {
  json j;
  j["config"] = parse_or_throw(p.config_json, "provenance config");
  j["seed"] = p.seed;
  return j;
}

Provenance provenance_from(const json& j) {
  Provenance p;
  if (j.contains("provenance")) {
    const auto& pj = j.at("provenance");
    if (pj.contains("config")) p.config_json = pj.at("config").dump();
    if (pj.contains("seed")) p.seed = pj.at("seed").get<std::uint64_t>();
  }
  return p;
}

void check_format(const json& j, std::string_view expected) {
  const auto fmt = field<std::string>(j, "format", "checkpoint");
  if (fmt != expected) {
    throw InputError("checkpoint: format '" + fmt + "' but expected '" + std::string(expected) + "'");
  }
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string manifest_to_json(const DatasetManifest& m) {
  json j;
  j["feature_dim"] = m.feature_dim;
  j["items"] = json::array();
  for (const auto& item : m.items) {
    json ij;
    ij["id"] = item.id;
    ij["split"] = std::string(to_string(item.split));
    ij["regions"] = item.regions;
    ij["sentences"] = item.sentences;
    j["items"].push_back(std::move(ij));
  }
  return j.dump();
}

DatasetManifest manifest_from_json(std::string_view text) {
  const json j = parse_or_throw(text, "manifest");
  DatasetManifest m;
  m.feature_dim = field<std::size_t>(j, "feature_dim", "manifest");
  const auto items = field<json>(j, "items", "manifest");
  if (!items.is_array()) throw InputError("manifest: 'items' must be an array");
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string what = "manifest item " + std::to_string(i);
    ImageItem item;
    item.id = field<std::string>(items[i], "id", what);
    try {
      item.split = parse_split(field<std::string>(items[i], "split", what));
    } catch (const ContractError& e) {
      throw InputError(what + ": " + e.what());
    }
    item.regions = field<std::vector<Vec>>(items[i], "regions", what);
    item.sentences = field<std::vector<Tokens>>(items[i], "sentences", what);
    m.items.push_back(std::move(item));
  }
  try {
    m.validate();
  } catch (const ContractError& e) {
    throw InputError(e.what());
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  try {
    return manifest_from_json(read_text_file(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string vocabulary_to_json(const Vocabulary& v) { return vocab_json(v).dump(); }

Vocabulary vocabulary_from_json(std::string_view text) { return vocab_from(parse_or_throw(text, "vocabulary")); }

std::string optimizer_config_to_json(const OptimizerConfig& c) {
  json j;
  j["optimizer"] = std::string(to_string(c.kind));
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["decay_rate"] = c.decay_rate;
  j["epsilon"] = c.epsilon;
  j["weight_decay"] = c.weight_decay;
  j["clip"] = c.clip;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  return j.dump();
}

OptimizerConfig optimizer_config_from_json(std::string_view text, OptimizerConfig c) {
  const json j = parse_or_throw(text, "training config");
  if (!j.is_object()) throw InputError("training config: expected a JSON object");
  const char* what = "training config";
  try {
    if (j.contains("optimizer")) c.kind = parse_optimizer(field<std::string>(j, "optimizer", what));
  } catch (const ContractError& e) {
    throw InputError(e.what());
  }
  if (j.contains("learning_rate")) c.learning_rate = field<double>(j, "learning_rate", what);
  if (j.contains("momentum")) c.momentum = field<double>(j, "momentum", what);
  if (j.contains("decay_rate")) c.decay_rate = field<double>(j, "decay_rate", what);
  if (j.contains("epsilon")) c.epsilon = field<double>(j, "epsilon", what);
  if (j.contains("weight_decay")) c.weight_decay = field<double>(j, "weight_decay", what);
  if (j.contains("clip")) c.clip = field<double>(j, "clip", what);
  if (j.contains("batch_size")) c.batch_size = field<std::size_t>(j, "batch_size", what);
  if (j.contains("epochs")) c.epochs = field<std::size_t>(j, "epochs", what);
  if (j.contains("seed")) c.seed = field<std::uint64_t>(j, "seed", what);
  return c;
}

std::string checkpoint_to_json(const AlignmentCheckpoint& c) {
  json j;
  j["format"] = std::string(kAlignFormat);
  json h;
  h["embed_dim"] = c.hyper.embed_dim;
  h["hidden_dim"] = c.hyper.hidden_dim;
  h["word_dim"] = c.hyper.word_dim;
  h["feature_dim"] = c.hyper.feature_dim;
  h["vocab_size"] = c.hyper.vocab_size;
  h["margin"] = c.hyper.loss.margin;
  h["score_variant"] = std::string(to_string(c.hyper.loss.score));
  h["dropout"] = c.hyper.loss.dropout;
  j["hyper"] = std::move(h);
  j["vocab_ref"] = vocab_json(c.vocab);
  j["params"] = params_to_json(c.params.blocks());
  j["provenance"] = provenance_json(c.provenance);
  return j.dump();
}

AlignmentCheckpoint alignment_checkpoint_from_json(std::string_view text) {
  const json j = parse_or_throw(text, "alignment checkpoint");
  check_format(j, kAlignFormat);
  AlignmentCheckpoint c;
  const auto h = field<json>(j, "hyper", "alignment checkpoint");
  const char* what = "alignment checkpoint hyper";
  c.hyper.embed_dim = field<std::size_t>(h, "embed_dim", what);
  c.hyper.hidden_dim = field<std::size_t>(h, "hidden_dim", what);
  c.hyper.word_dim = field<std::size_t>(h, "word_dim", what);
  c.hyper.feature_dim = field<std::size_t>(h, "feature_dim", what);
  c.hyper.vocab_size = field<std::size_t>(h, "vocab_size", what);
  c.hyper.loss.margin = field<double>(h, "margin", what);
  c.hyper.loss.dropout = field<double>(h, "dropout", what);
  try {
    c.hyper.loss.score = parse_score_variant(field<std::string>(h, "score_variant", what));
    c.params = AlignmentParams::zeros(c.hyper);
  } catch (const ContractError& e) {
    throw InputError(std::string(what) + ": " + e.what());
  }
  c.vocab = vocab_from(field<json>(j, "vocab_ref", "alignment checkpoint"));
  if (c.vocab.word_count() != c.hyper.vocab_size) {
    throw InputError("alignment checkpoint: vocabulary has " + std::to_string(c.vocab.word_count()) +
                     " words but hyper.vocab_size is " + std::to_string(c.hyper.vocab_size));
  }
  params_from_json(field<json>(j, "params", "alignment checkpoint"), c.params.blocks(), "alignment checkpoint");
  c.provenance = provenance_from(j);
  return c;
}

std::string_view to_string(CaptionSource s) { return s == CaptionSource::kFullframe ? "fullframe" : "region"; }

CaptionSource parse_caption_source(std::string_view s) {
  if (s == "fullframe") return CaptionSource::kFullframe;
  if (s == "region") return CaptionSource::kRegion;
  throw ContractError("unknown caption source '" + std::string(s) + "' (expected fullframe|region)");
}

std::string checkpoint_to_json(const GeneratorCheckpoint& c) {
  json j;
  j["format"] = std::string(kGenFormat);
  json h;
  h["feature_dim"] = c.hyper.feature_dim;
  h["vocab_size"] = c.hyper.vocab_size;
  h["word_dim"] = c.hyper.word_dim;
  h["hidden_dim"] = c.hyper.hidden_dim;
  j["hyper"] = std::move(h);
  json cond;
  cond["relu_inputs"] = c.hyper.relu_inputs;
  cond["image_first_step_only"] = true;
  cond["source"] = std::string(to_string(c.source));
  j["conditioning"] = std::move(cond);
  j["vocab_ref"] = vocab_json(c.vocab);
  j["params"] = params_to_json(c.params.blocks());
  j["provenance"] = provenance_json(c.provenance);
  return j.dump();
}

GeneratorCheckpoint generator_checkpoint_from_json(std::string_view text) {
  const json j = parse_or_throw(text, "generator checkpoint");
  check_format(j, kGenFormat);
  GeneratorCheckpoint c;
  const auto h = field<json>(j, "hyper", "generator checkpoint");
  const char* what = "generator checkpoint hyper";
  c.hyper.feature_dim = field<std::size_t>(h, "feature_dim", what);
  c.hyper.vocab_size = field<std::size_t>(h, "vocab_size", what);
  c.hyper.word_dim = field<std::size_t>(h, "word_dim", what);
  c.hyper.hidden_dim = field<std::size_t>(h, "hidden_dim", what);
  const auto cond = field<json>(j, "conditioning", "generator checkpoint");
  c.hyper.relu_inputs = field<bool>(cond, "relu_inputs", "generator checkpoint conditioning");
  try {
    c.source = parse_caption_source(field<std::string>(cond, "source", "generator checkpoint conditioning"));
    c.params = GeneratorParams::zeros(c.hyper);
  } catch (const ContractError& e) {
    throw InputError(std::string(what) + ": " + e.what());
  }
  c.vocab = vocab_from(field<json>(j, "vocab_ref", "generator checkpoint"));
  if (c.vocab.word_count() != c.hyper.vocab_size) {
    throw InputError("generator checkpoint: vocabulary has " + std::to_string(c.vocab.word_count()) +
                     " words but hyper.vocab_size is " + std::to_string(c.hyper.vocab_size));
  }
  params_from_json(field<json>(j, "params", "generator checkpoint"), c.params.blocks(), "generator checkpoint");
  c.provenance = provenance_from(j);
  return c;
}

namespace {

json dump_json(const AlignmentDump& d) {
  json j;
  j["image_id"] = d.image_id;
  j["sentence_index"] = d.sentence_index;
  j["tokens"] = d.tokens;
  j["assignments"] = d.path.assignments;
  j["segments"] = json::array();
  for (const auto& s : segments(d.path)) {
    json sj;
    sj["start"] = s.start;
    sj["end"] = s.end;
    sj["region"] = s.region;
    j["segments"].push_back(std::move(sj));
  }
  j["objective"] = d.path.objective;
  return j;
}

}  // namespace

std::string alignment_dump_to_json(const AlignmentDump& d) { return dump_json(d).dump(); }

std::string alignment_dumps_to_json(const std::vector<AlignmentDump>& dumps, double beta, const Provenance& prov) {
  json j;
  j["provenance"] = provenance_json(prov);
  j["beta"] = beta;
  j["alignments"] = json::array();
  for (const auto& d : dumps) j["alignments"].push_back(dump_json(d));
  return j.dump(1);
}

std::vector<AlignmentDump> alignment_dumps_from_json(std::string_view text) {
  const json j = parse_or_throw(text, "alignment dump");
  const auto arr = field<json>(j, "alignments", "alignment dump");
  if (!arr.is_array()) throw InputError("alignment dump: 'alignments' must be an array");
  std::vector<AlignmentDump> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string what = "alignment dump entry " + std::to_string(i);
    AlignmentDump d;
    d.image_id = field<std::string>(arr[i], "image_id", what);
    d.sentence_index = arr[i].value("sentence_index", std::size_t{0});
    d.tokens = field<Tokens>(arr[i], "tokens", what);
    d.path.assignments = field<std::vector<std::size_t>>(arr[i], "assignments", what);
    d.path.objective = field<double>(arr[i], "objective", what);
    if (d.tokens.size() != d.path.assignments.size()) {
      throw InputError(what + ": tokens and assignments differ in length");
    }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

json direction_json(const RankingResult& r) {
  json j;
  json rat = json::object();
  for (const auto& [k, v] : r.recall) rat[std::to_string(k)] = v;
  j["r_at"] = std::move(rat);
  j["median_rank"] = r.median_rank;
  j["queries"] = r.ranks.size();
  return j;
}

}  // namespace

std::string rank_report_to_json(const RankReport& r, const Provenance& prov) {
  json j;
  j["annotation"] = direction_json(r.annotation);
  j["search"] = direction_json(r.search);
  j["provenance"] = provenance_json(prov);
  return j.dump(2);
}

std::string caption_report_to_json(const CaptionReport& r, const Provenance& prov) {
  json j;
  json b = json::object();
  for (const auto& [n, v] : r.bleu) b[std::to_string(n)] = v;
  j["bleu"] = std::move(b);
  j["novelty_rate"] = r.novelty_rate;
  j["evaluated"] = r.evaluated;
  if (r.warning) j["warning"] = *r.warning;
  j["provenance"] = provenance_json(prov);
  return j.dump(2);
}

}  // namespace visemalign
