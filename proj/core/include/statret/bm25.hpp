#pragma once

#include <cstdint>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "statret/corpus.hpp"

namespace statret {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct SearchHit {
    std::size_t article = 0;  // index into the corpus article vector
    double score = 0.0;
};

/// Okapi BM25 inverted index over the tokenized corpus. Immutable after
/// build; safe to share across threads read-only.
class InvertedIndex {
public:
    struct Posting {
        std::size_t article = 0;
        std::size_t tf = 0;
    };

    InvertedIndex() = default;
    InvertedIndex(const Corpus& corpus, Bm25Params params);

    /// Score of one article for a tokenized query; tokens the article lacks
    /// contribute zero. Throws ValidationError on an out-of-range article.
    double score(const std::vector<std::size_t>& query_tokens, std::size_t article) const;

    /// Top-k by descending score, ties broken by ascending article index.
    /// Articles with zero score are never returned.
    std::vector<SearchHit> search_topk(const std::vector<std::size_t>& query_tokens,
                                       std::size_t k) const;

    /// The n best-scoring non-relevant articles; when fewer than n articles
    /// score above zero, the remainder is filled with seeded-random
    /// non-relevant picks. Throws ValidationError when the corpus has fewer
    /// than |relevant| + n articles.
    std::vector<std::size_t> mine_negatives(const std::vector<std::size_t>& query_tokens,
                                            const std::vector<std::size_t>& relevant,
                                            std::size_t n, std::uint64_t seed) const;

    std::size_t doc_count() const { return doc_len_.size(); }
    double avg_doc_len() const { return avg_len_; }
    std::size_t doc_len(std::size_t article) const;
    std::size_t df(std::size_t token) const;
    std::size_t tf(std::size_t token, std::size_t article) const;
    double idf(std::size_t token) const;
    const Bm25Params& params() const { return params_; }

    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

private:
    Bm25Params params_;
    std::unordered_map<std::size_t, std::vector<Posting>> postings_;
    std::vector<std::size_t> doc_len_;
    double avg_len_ = 0.0;

    void check_article(std::size_t article) const;
};

InvertedIndex build_index(const Corpus& corpus, Bm25Params params = {});

}  // namespace statret
