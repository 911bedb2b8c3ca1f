#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

#include "statret/bm25.hpp"
#include "statret/corpus.hpp"
#include "statret/encoder.hpp"
#include "statret/rng.hpp"
#include "statret/tape.hpp"

namespace statret {

struct ContrastiveConfig {
    double tau = 1.0;                       // softmax temperature
    std::size_t max_positives = 2;          // positives sampled per query per batch
    std::size_t num_negatives = 4;          // mined negatives per query
    bool include_other_negatives = true;    // other queries' mined negatives join the pool
};

/// One query's slice of a batch. Article references are indices into
/// ContrastiveBatch::articles (the batch-local candidate table).
struct BatchQuery {
    std::size_t query = 0;                  // index into the query list
    std::vector<std::size_t> positives;     // batch-local article slots
    std::vector<std::size_t> negatives;     // batch-local article slots
};

/// A fully resolved training batch: every candidate list is precomputed so
/// the loss is a pure function of the score matrix.
struct ContrastiveBatch {
    std::vector<BatchQuery> queries;
    std::vector<std::size_t> articles;      // corpus article indices, deduplicated
    /// One entry per (query, positive) pair, in batch order: the candidate
    /// slots {p} ∪ P_q′, positive first.
    struct Pair {
        std::size_t query_row = 0;          // row in the score matrix
        std::size_t positive_slot = 0;      // column of the positive
        std::vector<std::size_t> candidate_slots;
    };
    std::vector<Pair> pairs;
};

/// Assembles a batch for the given query indices: subsamples each query's
/// positives to max_positives, attaches mined negatives, and builds each
/// pair's candidate list as the positive plus the query's negative pool
/// (own mined negatives, then other queries' positives and, when enabled,
/// their mined negatives), skipping every article relevant to the query.
/// Mined negatives are deterministic per (seed, query id).
ContrastiveBatch build_contrastive_batch(const Corpus& corpus,
                                         const std::vector<Query>& queries,
                                         const std::vector<std::size_t>& batch_queries,
                                         const InvertedIndex& index,
                                         const ContrastiveConfig& cfg, Rng& rng,
                                         std::uint64_t mine_seed);

/// Scores every batch query against every batch article: rows are queries,
/// columns are article slots, entries f(q, p) / τ.
Var batch_scores(Tape& t, const BiEncoder& encoder, const Corpus& corpus,
                 const std::vector<Query>& queries, const ContrastiveBatch& batch,
                 const ContrastiveConfig& cfg, bool train, Rng& dropout_rng);

/// Mean over (query, positive) pairs of −log softmax(positive | candidates)
/// on the scaled score matrix. Throws ValidationError if any pair has no
/// negatives.
Var contrastive_loss(Tape& t, Var scores, const ContrastiveBatch& batch);

}  // namespace statret
