#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "statret/bm25.hpp"
#include "statret/contrastive.hpp"
#include "statret/corpus.hpp"
#include "statret/encoder.hpp"

namespace statret {

struct Stage1Config {
    std::size_t epochs = 15;
    std::size_t batch_size = 24;
    /// Peak of the warmup/decay schedule. The towers train from random
    /// initialization at desk scale, so this sits well above the fine-tuning
    /// regime.
    double peak_lr = 3e-3;
    double clip_norm = 1.0;
    std::size_t selection_k = 10;  // validation R@k used to pick the kept epoch
    ContrastiveConfig contrastive;

    void validate() const;  // throws ConfigError
};

/// One record of a training curve; serialized as line-delimited JSON.
struct CurvePoint {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
};

void write_curve_jsonl(const std::string& path, const std::vector<CurvePoint>& curve);

struct Stage1Result {
    std::vector<CurvePoint> curve;
    std::vector<double> epoch_mean_loss;  // one entry per epoch
    std::vector<double> val_recall;       // per epoch; empty without a validation split
    std::size_t best_epoch = 0;           // 1-based epoch whose weights were kept
    double best_val_recall = -1.0;        // -1 when no validation split exists
};

/// Mean recall@k of eval-mode dense retrieval over the given queries.
double dense_mean_recall(const BiEncoder& encoder, const Corpus& corpus,
                         const std::vector<Query>& queries, std::size_t k);

/// Trains both towers with the contrastive objective: per-epoch shuffled
/// batches, mined plus in-batch negatives, AdamW with warmup/decay and
/// global-norm clipping. With a validation split the epoch with the best
/// validation R@k is restored into the store before returning; otherwise the
/// final weights stand. Throws NumericError naming the step if the loss
/// stops being finite.
Stage1Result stage1_train(ParamStore& store, BiEncoder& encoder, const Corpus& corpus,
                          const DatasetSplit& split, const InvertedIndex& index,
                          const Stage1Config& cfg, std::uint64_t seed);

}  // namespace statret
