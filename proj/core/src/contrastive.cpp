#include "statret/contrastive.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "statret/errors.hpp"

namespace statret {

namespace {

std::size_t slot_of(std::vector<std::size_t>& articles,
                    std::unordered_map<std::size_t, std::size_t>& slot_by_article,
                    std::size_t article) {
    auto it = slot_by_article.find(article);
    if (it != slot_by_article.end()) return it->second;
    std::size_t slot = articles.size();
    slot_by_article.emplace(article, slot);
    articles.push_back(article);
    return slot;
}

}  // namespace

ContrastiveBatch build_contrastive_batch(const Corpus& corpus,
                                         const std::vector<Query>& queries,
                                         const std::vector<std::size_t>& batch_queries,
                                         const InvertedIndex& index,
                                         const ContrastiveConfig& cfg, Rng& rng,
                                         std::uint64_t mine_seed) {
    if (batch_queries.empty()) throw ValidationError("contrastive batch: no queries");

    ContrastiveBatch batch;
    std::unordered_map<std::size_t, std::size_t> slot_by_article;

    // per batch query: relevant article indices, subsampled positives and
    // mined negatives, all in corpus indices first
    std::vector<std::vector<std::size_t>> relevant_sets, positives, negatives;
    for (std::size_t qi : batch_queries) {
        const Query& q = queries.at(qi);
        std::vector<std::size_t> relevant;
        for (const std::string& rid : q.relevant_ids) relevant.push_back(corpus.article_index(rid));

        std::vector<std::size_t> pos(relevant);
        rng.shuffle(pos);
        if (pos.size() > cfg.max_positives) pos.resize(cfg.max_positives);
        std::sort(pos.begin(), pos.end());

        std::vector<std::size_t> neg =
            index.mine_negatives(q.tokens, relevant, cfg.num_negatives,
                                 mine_seed ^ fnv1a(q.id));

        relevant_sets.push_back(std::move(relevant));
        positives.push_back(std::move(pos));
        negatives.push_back(std::move(neg));
    }

    // batch-local slots, in a fixed order: each query's positives then its
    // negatives
    for (std::size_t b = 0; b < batch_queries.size(); ++b) {
        BatchQuery bq;
        bq.query = batch_queries[b];
        for (std::size_t a : positives[b]) {
            bq.positives.push_back(slot_of(batch.articles, slot_by_article, a));
        }
        for (std::size_t a : negatives[b]) {
            bq.negatives.push_back(slot_of(batch.articles, slot_by_article, a));
        }
        batch.queries.push_back(std::move(bq));
    }

    // candidate lists: positive first, then the query's own negatives, then
    // the other queries' articles; anything relevant to this query is
    // skipped, duplicates collapse
    for (std::size_t b = 0; b < batch.queries.size(); ++b) {
        std::unordered_set<std::size_t> relevant(relevant_sets[b].begin(), relevant_sets[b].end());
        for (std::size_t p_slot : batch.queries[b].positives) {
            ContrastiveBatch::Pair pair;
            pair.query_row = b;
            pair.positive_slot = p_slot;
            pair.candidate_slots.push_back(p_slot);
            std::unordered_set<std::size_t> seen = {p_slot};
            auto add = [&](std::size_t slot) {
                std::size_t article = batch.articles[slot];
                if (relevant.count(article)) return;
                if (!seen.insert(slot).second) return;
                pair.candidate_slots.push_back(slot);
            };
            for (std::size_t slot : batch.queries[b].negatives) add(slot);
            for (std::size_t other = 0; other < batch.queries.size(); ++other) {
                if (other == b) continue;
                for (std::size_t slot : batch.queries[other].positives) add(slot);
                if (cfg.include_other_negatives) {
                    for (std::size_t slot : batch.queries[other].negatives) add(slot);
                }
            }
            if (pair.candidate_slots.size() < 2) {
                throw ValidationError("contrastive batch: query " +
                                      queries.at(batch.queries[b].query).id +
                                      " has an empty negative set");
            }
            batch.pairs.push_back(std::move(pair));
        }
    }
    return batch;
}

Var batch_scores(Tape& t, const BiEncoder& encoder, const Corpus& corpus,
                 const std::vector<Query>& queries, const ContrastiveBatch& batch,
                 const ContrastiveConfig& cfg, bool train, Rng& dropout_rng) {
    if (cfg.tau <= 0.0) throw ConfigError("contrastive: tau must be positive");

    std::vector<Var> q_rows, a_rows;
    q_rows.reserve(batch.queries.size());
    for (const BatchQuery& bq : batch.queries) {
        Var v = encoder.encode_query(t, queries.at(bq.query).tokens, train, dropout_rng);
        q_rows.push_back(t.reshape(v, {1, encoder.config().dim}));
    }
    a_rows.reserve(batch.articles.size());
    for (std::size_t article : batch.articles) {
        Var v = encoder.encode_article(t, corpus.articles.at(article).tokens, train, dropout_rng);
        a_rows.push_back(t.reshape(v, {1, encoder.config().dim}));
    }
    Var q = t.concat_rows(q_rows);
    Var a = t.concat_rows(a_rows);
    return t.scale(t.matmul(q, t.transpose(a)), 1.0 / cfg.tau);
}

Var contrastive_loss(Tape& t, Var scores, const ContrastiveBatch& batch) {
    if (batch.pairs.empty()) throw ValidationError("contrastive loss: batch has no pairs");
    std::size_t cols = scores.val().cols();

    std::vector<Var> pair_losses;
    pair_losses.reserve(batch.pairs.size());
    for (const ContrastiveBatch::Pair& pair : batch.pairs) {
        if (pair.candidate_slots.size() < 2) {
            throw ValidationError("contrastive loss: pair without negatives");
        }
        std::vector<std::size_t> cand_idx;
        cand_idx.reserve(pair.candidate_slots.size());
        for (std::size_t slot : pair.candidate_slots) {
            cand_idx.push_back(pair.query_row * cols + slot);
        }
        Var cand = t.gather_elems(scores, cand_idx);
        Var pos = t.gather_elems(scores, {pair.query_row * cols + pair.positive_slot});
        pair_losses.push_back(t.sub(t.log_sum_exp(cand), pos));
    }
    return t.mean(t.concat_rows(pair_losses));
}

}  // namespace statret
