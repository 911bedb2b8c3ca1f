#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "statret/bm25.hpp"
#include "statret/checkpoint.hpp"
#include "statret/corpus.hpp"
#include "statret/distill.hpp"
#include "statret/encoder.hpp"
#include "statret/gat.hpp"
#include "statret/metrics.hpp"
#include "statret/stage1.hpp"

namespace statret {

/// Flat key/value configuration with [section] headers. Keys are stored and
/// addressed as "section.name"; serialization is canonical (sorted keys,
/// grouped by section), so equal configurations always produce equal bytes.
class KeyValueConfig {
public:
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    /// Raw string value; throws ConfigError when the key is absent.
    const std::string& raw(const std::string& key) const;

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    /// Comma-separated unsigned list; the fallback is returned only when the
    /// key is absent, an empty value is an error.
    std::vector<std::size_t> get_size_list(const std::string& key,
                                           const std::vector<std::size_t>& fallback) const;

    std::vector<std::string> keys() const;  // sorted
    std::string serialize() const;

    /// Accepts comment lines (# or ;), blank lines, [section] headers and
    /// key = value pairs; anything else throws ConfigError with the line
    /// number. Later duplicates win.
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig parse_file(const std::string& path);

private:
    std::map<std::string, std::string> values_;
};

/// Applies "section.key=value" command-line overrides in order.
void apply_overrides(KeyValueConfig& kv, const std::vector<std::string>& overrides);

/// Everything a training or evaluation command needs, serializable to a
/// config file and back without loss. A run directory always stores the
/// exact effective configuration that produced it.
struct ExperimentConfig {
    std::string data_dir = "data";
    std::string out_dir = "runs";
    std::uint64_t seed = 1;
    Bm25Params bm25;
    EncoderConfig encoder;
    Stage1Config stage1;
    Stage2Config stage2;
    std::vector<std::size_t> eval_k = {5, 10, 20};

    void validate() const;  // throws ConfigError
};

/// Builds a configuration from parsed keys, starting from the defaults
/// above. Unknown keys are rejected with a ConfigError naming them; an
/// absent gat.dim follows encoder.dim. One [contrastive] section feeds both
/// training stages.
ExperimentConfig experiment_from_kv(const KeyValueConfig& kv);
KeyValueConfig experiment_to_kv(const ExperimentConfig& cfg);

inline constexpr const char* kKindBm25 = "bm25";
inline constexpr const char* kKindStage1 = "stage1";
inline constexpr const char* kKindStage2 = "stage2";

/// What a run directory is and where it came from.
struct RunManifest {
    std::string kind;         // bm25 | stage1 | stage2
    std::string config_name;  // retriever registry name used in reports
    std::uint64_t seed = 0;
    std::string data_dir;     // dataset the run was built from
    std::string stage1_dir;   // stage-2 runs: the run they started from
};

void write_manifest(const std::string& path, const RunManifest& manifest);
RunManifest read_manifest(const std::string& path);

namespace runfiles {
inline constexpr const char* kConfig = "config.ini";
inline constexpr const char* kManifest = "run.json";
inline constexpr const char* kCheckpoint = "model.ckpt";
inline constexpr const char* kCurve = "curve.jsonl";
inline constexpr const char* kArticleMatrix = "articles.mat";
inline constexpr const char* kIndex = "bm25.idx";
inline constexpr const char* kGraph = "graph.jsonl";
std::string report(const std::string& split);     // report_<split>.jsonl
std::string breakdown(const std::string& split);  // breakdown_<split>.jsonl
}  // namespace runfiles

/// Registry label of a plain stage-1 run.
std::string stage1_config_name(const EncoderConfig& cfg);
/// Registry label of a stage-2 run, decided by the first axis that differs
/// from the full model: graph choice, then schedule, then kd mode.
std::string stage2_config_name(const Stage2Config& cfg);

/// Creates the directory and writes the manifest plus the effective config.
void init_run_dir(const std::string& dir, const RunManifest& manifest,
                  const ExperimentConfig& cfg);

struct LoadedRun {
    std::string dir;
    RunManifest manifest;
    ExperimentConfig config;
};

/// Throws ValidationError when the directory or its metadata is missing.
LoadedRun load_run_dir(const std::string& dir);

/// A trained model rebuilt from a run directory: parameters registered in
/// training order (encoder, then the attention stack for stage-2 runs that
/// had a graph), checkpoint values restored.
struct RestoredModel {
    ParamStore store;
    std::unique_ptr<BiEncoder> encoder;
    std::unique_ptr<GatStack> gat;  // null when the run trained none
};

RestoredModel restore_run_model(const LoadedRun& run, const Corpus& corpus);

/// Builds and persists the sparse-baseline run directory.
void run_bm25(const std::string& run_dir, const ExperimentConfig& cfg);

/// Full stage-1 pipeline into a run directory: dataset load, index build,
/// contrastive training, checkpoint + curve + exported article matrix.
/// An empty name derives the registry label from the encoder shape.
Stage1Result run_stage1(const std::string& run_dir, const ExperimentConfig& cfg,
                        const std::string& name = "");

/// Stage 2 on top of an existing stage-1 run. The encoder shape, BM25
/// parameters, stage-1 section and dataset come from the source run; the
/// given config contributes the stage-2 section, eval ks and the seed, with
/// the attention width forced to the restored encoder's dim. The merged
/// effective config is what the new run directory records.
Stage2Result run_stage2(const std::string& run_dir, const std::string& stage1_dir,
                        const ExperimentConfig& cfg, const std::string& name = "");

/// Queries of one named split: "train", "val" (alias "validation") or
/// "test". Unknown names throw ConfigError, an empty split ValidationError.
const std::vector<Query>& split_queries(const DatasetSplit& split, const std::string& name);

struct RunEvaluation {
    std::vector<EvalReport> reports;  // one per run, argument order
    std::string table;                // comparison when two or more runs
};

/// Evaluates run directories over one split ("train", "val" or "test") with
/// a shared k list (empty: the first run's configured list). Every run must
/// reference the same dataset. Reports and per-query breakdowns are written
/// into each run directory; they are pure functions of the stored artifacts,
/// so re-evaluating reproduces them byte for byte.
RunEvaluation evaluate_runs(const std::vector<std::string>& run_dirs,
                            const std::string& split_name,
                            const std::vector<std::size_t>& k_list);

struct InferHit {
    std::string id;
    double score = 0.0;
};

/// Ranks the corpus for one free-text question with a run's retriever:
/// BM25 for index runs, the trained encoders against the exported article
/// matrix otherwise. Serves questions that never appeared in training.
std::vector<InferHit> infer_from_run(const LoadedRun& run, const Corpus& corpus,
                                     const std::string& text, std::size_t k);

}  // namespace statret
