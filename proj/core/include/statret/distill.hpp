#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "statret/checkpoint.hpp"
#include "statret/contrastive.hpp"
#include "statret/corpus.hpp"
#include "statret/encoder.hpp"
#include "statret/gat.hpp"
#include "statret/graph.hpp"

namespace statret {

enum class KdMode { Score, Feature, Both, None };
enum class KdSchedule { Joint, Sequential };

/// The stage-2 graph axis. Unlike GraphMode this includes None, which turns
/// stage 2 into a pass-through: no graph, no refinement, and therefore no
/// distillation target.
enum class GraphChoice { Both, BipartiteOnly, StatuteOnly, None };

KdMode parse_kd_mode(const std::string& name);            // throws ConfigError
KdSchedule parse_kd_schedule(const std::string& name);    // throws ConfigError
GraphChoice parse_graph_choice(const std::string& name);  // throws ConfigError
const char* kd_mode_name(KdMode m);
const char* kd_schedule_name(KdSchedule s);
const char* graph_choice_name(GraphChoice g);

struct Stage2Config {
    double lambda_con = 0.7;
    double lambda_kd = 0.3;
    std::size_t epochs = 20;
    std::size_t batch_size = 64;
    double lr = 2e-4;  // constant; stage 2 fine-tunes, no warmup or decay
    double clip_norm = 1.0;
    KdMode kd_mode = KdMode::Score;
    KdSchedule schedule = KdSchedule::Joint;
    GraphChoice graph = GraphChoice::Both;
    /// Recompute node features from the current encoders every step instead
    /// of freezing them once at the start of stage 2. Experimental.
    bool refresh_features = false;
    /// Encode article node features on the tape so contrastive gradients
    /// reach the article tower, which is otherwise frozen. Experimental.
    bool train_article_encoder = false;
    ContrastiveConfig contrastive;
    GatConfig gat;

    /// Rejects distillation without a graph (choices None and StatuteOnly
    /// have no graph-side query representation to distill from) and a
    /// sequential schedule without a distillation phase.
    void validate() const;  // throws ConfigError
};

/// Probabilities over one query's candidate article list.
struct ScoreDistribution {
    std::vector<double> probs;
    /// A single-candidate list is forced to [1.0] and flagged here.
    bool degenerate = false;
};

/// Max-subtracted softmax of the dot products between a query vector and
/// each article row; no temperature. Throws ValidationError on an empty
/// candidate list.
ScoreDistribution score_distribution(const Tensor& query_vec, const Tensor& article_rows);

/// KL(teacher || student) over one shared candidate list. Student entries
/// below 1e-12 are clamped there; clamp_events, when given, is incremented
/// for every clamped position the teacher assigns positive mass.
double kd_score_loss(const ScoreDistribution& teacher, const ScoreDistribution& student,
                     std::size_t* clamp_events = nullptr);

/// Mean over the batch of the squared L2 distance between paired vectors.
double kd_feature_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& target);

/// The joint-step combination rule, written exactly as the training step
/// evaluates it so curve records can be checked against it bit for bit.
double stage2_total(const Stage2Config& cfg, double contrastive, double kd);

/// One stage-2 step record. Phase is "joint" when both objectives train,
/// "contrastive" in the graph-only phase of the sequential schedule and
/// "kd" in its distillation-only phase.
struct Stage2CurvePoint {
    std::size_t step = 0;
    std::size_t epoch = 0;
    std::string phase;
    double total = 0.0;
    double contrastive = 0.0;
    double kd = 0.0;
    double lr = 0.0;
};

void write_stage2_curve_jsonl(const std::string& path,
                              const std::vector<Stage2CurvePoint>& curve);

struct Stage2Result {
    std::vector<Stage2CurvePoint> curve;
    /// Per-epoch means of each component; 0 in epochs where a component is
    /// inactive. The sequential schedule contributes 2 * epochs entries.
    std::vector<double> epoch_contrastive;
    std::vector<double> epoch_kd;
    std::size_t clamp_events = 0;
};

/// Everything stage 2 adds on top of the stage-1 store: the training graph,
/// the attention stack (parameters registered under "gat.") and the node
/// feature matrix frozen at preparation time. Graph choice None leaves all
/// three empty.
struct Stage2Artifacts {
    HeteroGraph graph;
    GatStack gat;
    Tensor features;  // {graph nodes, dim}
};

/// Builds the graph for the configured mode over the training queries,
/// creates the attention stack in the store and initializes node features
/// from the current encoders. The attention dim must match the encoder dim.
Stage2Artifacts prepare_stage2(ParamStore& store, const BiEncoder& encoder,
                               const Corpus& corpus, const DatasetSplit& split,
                               const Stage2Config& cfg, std::uint64_t seed);

/// Second-stage training. Contrastive loss on graph representations updates
/// the attention stack (and, with train_article_encoder, the article tower);
/// the distillation loss updates the query tower only, against detached
/// graph-side targets. The token table never trains here. Joint schedule
/// combines both losses each step; sequential runs all epochs contrastive-
/// only, then freezes the graph side and distills for another full round.
/// Graph choice None returns an empty result. Throws NumericError naming
/// the step if the loss stops being finite. When a feature-refresh flag is
/// set the artifact features are recomputed from the final encoders before
/// returning, so exports see the updated values.
Stage2Result stage2_train(ParamStore& store, BiEncoder& encoder, Stage2Artifacts& art,
                          const Corpus& corpus, const DatasetSplit& split,
                          const InvertedIndex& index, const Stage2Config& cfg,
                          std::uint64_t seed);

/// Retrieval index after stage 2: one evaluation forward over the full
/// graph, article-node rows read out in corpus order. Graph choice None
/// falls back to the plain article-encoder index, so retrieval degenerates
/// to the bi-encoder exactly.
ArticleMatrixFile export_article_embeddings(const BiEncoder& encoder, const Corpus& corpus,
                                            const Stage2Artifacts& art);

/// Ranks articles for one query against an exported matrix: eval-mode query
/// encoding, exhaustive dot products, descending score with ascending-row
/// tie break. Serves queries that never appeared in the graph.
std::vector<DenseHit> infer_rank(const BiEncoder& encoder, const ArticleMatrixFile& index,
                                 const std::vector<std::size_t>& query_tokens, std::size_t k);

}  // namespace statret
