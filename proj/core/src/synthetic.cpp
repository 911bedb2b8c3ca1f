#include "statret/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "statret/errors.hpp"
#include "statret/rng.hpp"

namespace statret {

namespace {

void validate(const SyntheticSpec& s) {
    if (s.topics < 1) throw ConfigError("synthetic spec: topics must be >= 1");
    if (s.articles_per_topic < 1) throw ConfigError("synthetic spec: articles_per_topic must be >= 1");
    if (s.section_size < 1) throw ConfigError("synthetic spec: section_size must be >= 1");
    if (s.sections_per_chapter < 1) throw ConfigError("synthetic spec: sections_per_chapter must be >= 1");
    if (s.relevant_min < 1) throw ConfigError("synthetic spec: relevant_min must be >= 1");
    if (s.relevant_max < s.relevant_min) throw ConfigError("synthetic spec: relevant_max < relevant_min");
    if (s.relevant_max > s.articles_per_topic) {
        throw ConfigError("synthetic spec: relevant_max exceeds articles per topic");
    }
    if (s.noise_rate < 0.0 || s.noise_rate > 1.0) {
        throw ConfigError("synthetic spec: noise_rate must lie in [0,1]");
    }
    if (s.topic_common_tokens < 1 || s.section_doc_tokens < 1 || s.section_query_tokens < 1 ||
        s.noise_tokens < 1) {
        throw ConfigError("synthetic spec: token pools must be non-empty");
    }
    if (s.article_len <= s.article_len_jitter) {
        throw ConfigError("synthetic spec: article_len must exceed article_len_jitter");
    }
    if (s.query_len < 1) throw ConfigError("synthetic spec: query_len must be >= 1");
}

const std::string& pick(const std::vector<std::string>& pool, Rng& rng) {
    return pool[rng.below(pool.size())];
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace

LoadedDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    validate(spec);
    Rng rng(seed);

    std::size_t sections_per_topic =
        (spec.articles_per_topic + spec.section_size - 1) / spec.section_size;
    std::size_t total_sections = spec.topics * sections_per_topic;

    // token pools; every name is a single alphanumeric word so it survives
    // tokenization intact
    std::vector<std::vector<std::string>> common(spec.topics);
    for (std::size_t t = 0; t < spec.topics; ++t) {
        for (std::size_t i = 0; i < spec.topic_common_tokens; ++i) {
            common[t].push_back("t" + std::to_string(t) + "c" + std::to_string(i));
        }
    }
    std::vector<std::vector<std::string>> doc_pool(total_sections), query_pool(total_sections);
    for (std::size_t s = 0; s < total_sections; ++s) {
        for (std::size_t i = 0; i < spec.section_doc_tokens; ++i) {
            doc_pool[s].push_back("s" + std::to_string(s) + "d" + std::to_string(i));
        }
        for (std::size_t i = 0; i < spec.section_query_tokens; ++i) {
            query_pool[s].push_back("s" + std::to_string(s) + "q" + std::to_string(i));
        }
    }
    std::vector<std::string> noise;
    for (std::size_t i = 0; i < spec.noise_tokens; ++i) noise.push_back("n" + std::to_string(i));

    // articles, with one section per article group and per-topic book/title
    std::vector<Article> articles;
    std::vector<std::vector<std::size_t>> section_members(total_sections);  // global article indices
    std::vector<std::size_t> article_topic;
    for (std::size_t t = 0; t < spec.topics; ++t) {
        for (std::size_t j = 0; j < spec.articles_per_topic; ++j) {
            std::size_t local_section = j / spec.section_size;
            std::size_t global_section = t * sections_per_topic + local_section;
            std::size_t chapter = local_section / spec.sections_per_chapter;

            Article a;
            a.id = "a" + std::to_string(articles.size());
            a.path.book = "b" + std::to_string(t);
            a.path.title = "tt" + std::to_string(t);
            a.path.chapter = "ch" + std::to_string(t) + "x" + std::to_string(chapter);
            a.path.section = "sec" + std::to_string(global_section);

            std::size_t len = spec.article_len - spec.article_len_jitter +
                              rng.below(2 * spec.article_len_jitter + 1);
            std::vector<std::string> words;
            words.reserve(len);
            for (std::size_t k = 0; k < len; ++k) {
                if (rng.uniform01() < spec.noise_rate) {
                    words.push_back(pick(noise, rng));
                } else if (rng.uniform01() < 0.45) {
                    words.push_back(pick(common[t], rng));
                } else {
                    words.push_back(pick(doc_pool[global_section], rng));
                }
            }
            a.text = join(words);

            section_members[global_section].push_back(articles.size());
            article_topic.push_back(t);
            articles.push_back(std::move(a));
        }
    }

    // queries: topics round-robin for balanced coverage, random section
    // within the topic, relevant set sampled inside that section
    std::size_t total_queries = spec.train_queries + spec.val_queries + spec.test_queries;
    std::vector<Query> queries;
    for (std::size_t qi = 0; qi < total_queries; ++qi) {
        std::size_t t = qi % spec.topics;
        std::size_t global_section = t * sections_per_topic + rng.below(sections_per_topic);
        const std::vector<std::size_t>& members = section_members[global_section];

        std::size_t cap = std::min(spec.relevant_max, members.size());
        std::size_t lo = std::min(spec.relevant_min, cap);
        std::size_t size = lo + rng.below(cap - lo + 1);

        std::vector<std::size_t> order(members);
        rng.shuffle(order);
        order.resize(size);
        std::sort(order.begin(), order.end());

        Query q;
        q.id = "q" + std::to_string(qi);
        for (std::size_t idx : order) q.relevant_ids.push_back(articles[idx].id);

        std::vector<std::string> words;
        words.reserve(spec.query_len);
        for (std::size_t k = 0; k < spec.query_len; ++k) {
            if (rng.uniform01() < spec.noise_rate) {
                words.push_back(pick(noise, rng));
            } else if (rng.uniform01() < 0.4) {
                words.push_back(pick(common[t], rng));
            } else {
                words.push_back(pick(query_pool[global_section], rng));
            }
        }
        q.text = join(words);
        queries.push_back(std::move(q));
    }

    LoadedDataset out;
    out.split.train.assign(queries.begin(), queries.begin() + spec.train_queries);
    out.split.validation.assign(queries.begin() + spec.train_queries,
                                queries.begin() + spec.train_queries + spec.val_queries);
    out.split.test.assign(queries.begin() + spec.train_queries + spec.val_queries, queries.end());
    out.corpus = assemble_corpus(std::move(articles),
                                 {&out.split.train, &out.split.validation, &out.split.test});
    return out;
}

}  // namespace statret
