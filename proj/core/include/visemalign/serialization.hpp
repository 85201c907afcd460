#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "visemalign/alignment_model.hpp"
#include "visemalign/corpus.hpp"
#include "visemalign/eval.hpp"
#include "visemalign/generator.hpp"
#include "visemalign/mrf_decoder.hpp"
#include "visemalign/optimize.hpp"

namespace visemalign {

// Malformed or missing input files. Messages name the offending path/field.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kAlignFormat = "visemalign-align-v1";
inline constexpr std::string_view kGenFormat = "visemalign-gen-v1";

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Dataset manifest: {"feature_dim", "items": [{"id","split","regions","sentences"}]}
std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(std::string_view text);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Vocabulary: {"tokens","counts","start_index","end_index"}
std::string vocabulary_to_json(const Vocabulary& v);
Vocabulary vocabulary_from_json(std::string_view text);

// Training config: optimizer name, rates, clip, batch size, epochs, seed.
std::string optimizer_config_to_json(const OptimizerConfig& c);
// Missing keys keep the values already in `defaults`.
OptimizerConfig optimizer_config_from_json(std::string_view text, OptimizerConfig defaults = {});

// Run provenance echoed into every artifact: a JSON object (as text).
struct Provenance {
  std::string config_json = "{}";
  std::uint64_t seed = 0;
};

struct AlignmentCheckpoint {
  AlignmentHyper hyper;
  Vocabulary vocab;
  AlignmentParams params;
  Provenance provenance;
};

std::string checkpoint_to_json(const AlignmentCheckpoint& c);
AlignmentCheckpoint alignment_checkpoint_from_json(std::string_view text);

enum class CaptionSource { kFullframe, kRegion };
std::string_view to_string(CaptionSource s);
CaptionSource parse_caption_source(std::string_view s);

struct GeneratorCheckpoint {
  GeneratorHyper hyper;
  Vocabulary vocab;
  GeneratorParams params;
  CaptionSource source = CaptionSource::kFullframe;
  Provenance provenance;
};

std::string checkpoint_to_json(const GeneratorCheckpoint& c);
GeneratorCheckpoint generator_checkpoint_from_json(std::string_view text);

// Per (image, sentence) decoded alignment.
struct AlignmentDump {
  std::string image_id;
  std::size_t sentence_index = 0;
  Tokens tokens;
  AlignmentPath path;
};

// {"image_id","sentence_index","tokens","assignments","segments":[{"start","end","region"}],"objective"}
std::string alignment_dump_to_json(const AlignmentDump& d);
// Wraps dumps in {"provenance": ..., "beta": ..., "alignments": [...]}.
std::string alignment_dumps_to_json(const std::vector<AlignmentDump>& dumps, double beta, const Provenance& prov);
std::vector<AlignmentDump> alignment_dumps_from_json(std::string_view text);

// {"annotation": {"r_at": {K: v}, "median_rank": m}, "search": {...}}
std::string rank_report_to_json(const RankReport& r, const Provenance& prov);

struct CaptionReport {
  std::map<std::size_t, double> bleu;  // order -> score
  double novelty_rate = 0.0;
  std::size_t evaluated = 0;
  std::optional<std::string> warning;
};
// {"bleu": {"1": v, ...}, "novelty_rate": f}
std::string caption_report_to_json(const CaptionReport& r, const Provenance& prov);

}  // namespace visemalign
