#pragma once

#include <cstdint>
#include <cstddef>

#include "statret/corpus.hpp"

namespace statret {

/// Shape parameters for the planted-topic corpus generator. Articles are
/// grouped into topics; each topic owns a token sub-vocabulary. Within a
/// topic, articles are further grouped into sections, and every query targets
/// a subset of one section. Queries draw their specific tokens from a
/// query-surface pool that never appears in article text, so lexical overlap
/// identifies the topic but not the relevant articles; section membership is
/// encoded in the hierarchy, and only trained encoders can exploit the
/// query-surface pools.
struct SyntheticSpec {
    std::size_t topics = 4;
    std::size_t articles_per_topic = 50;
    std::size_t section_size = 5;           // articles per section
    std::size_t sections_per_chapter = 5;

    std::size_t train_queries = 100;
    std::size_t val_queries = 0;
    std::size_t test_queries = 30;
    std::size_t relevant_min = 1;
    std::size_t relevant_max = 5;

    std::size_t topic_common_tokens = 30;   // shared across a topic's articles and queries
    std::size_t section_doc_tokens = 8;     // per section, article text only
    std::size_t section_query_tokens = 4;   // per section, query text only
    std::size_t noise_tokens = 50;          // global pool, both sides

    std::size_t article_len = 60;
    std::size_t article_len_jitter = 12;
    std::size_t query_len = 12;
    double noise_rate = 0.1;
};

/// Deterministic under seed: the same spec and seed produce byte-identical
/// datasets. Throws ConfigError when the spec is infeasible (for example
/// more relevant labels requested than a topic has articles).
LoadedDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace statret
