#include "statret/bm25.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "statret/errors.hpp"
#include "statret/rng.hpp"

namespace statret {

InvertedIndex::InvertedIndex(const Corpus& corpus, Bm25Params params) : params_(params) {
    if (params_.k1 <= 0.0) throw ConfigError("bm25: k1 must be positive");
    if (params_.b < 0.0 || params_.b > 1.0) throw ConfigError("bm25: b must lie in [0,1]");

    doc_len_.resize(corpus.size());
    std::size_t total_len = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::vector<std::size_t>& toks = corpus.articles[i].tokens;
        doc_len_[i] = toks.size();
        total_len += toks.size();
        std::unordered_map<std::size_t, std::size_t> counts;
        for (std::size_t t : toks) ++counts[t];
        for (const auto& [token, tf] : counts) {
            postings_[token].push_back(Posting{i, tf});
        }
    }
    for (auto& [token, list] : postings_) {
        std::sort(list.begin(), list.end(),
                  [](const Posting& a, const Posting& b) { return a.article < b.article; });
    }
    avg_len_ = doc_len_.empty() ? 0.0 : static_cast<double>(total_len) / doc_len_.size();
}

void InvertedIndex::check_article(std::size_t article) const {
    if (article >= doc_len_.size()) {
        throw ValidationError("bm25: article index " + std::to_string(article) +
                              " outside corpus of size " + std::to_string(doc_len_.size()));
    }
}

std::size_t InvertedIndex::doc_len(std::size_t article) const {
    check_article(article);
    return doc_len_[article];
}

std::size_t InvertedIndex::df(std::size_t token) const {
    auto it = postings_.find(token);
    return it == postings_.end() ? 0 : it->second.size();
}

std::size_t InvertedIndex::tf(std::size_t token, std::size_t article) const {
    check_article(article);
    auto it = postings_.find(token);
    if (it == postings_.end()) return 0;
    const std::vector<Posting>& list = it->second;
    auto pos = std::lower_bound(list.begin(), list.end(), article,
                                [](const Posting& p, std::size_t a) { return p.article < a; });
    if (pos == list.end() || pos->article != article) return 0;
    return pos->tf;
}

double InvertedIndex::idf(std::size_t token) const {
    double n = static_cast<double>(doc_count());
    double d = static_cast<double>(df(token));
    return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
}

double InvertedIndex::score(const std::vector<std::size_t>& query_tokens,
                            std::size_t article) const {
    check_article(article);
    double len_ratio = avg_len_ > 0.0 ? static_cast<double>(doc_len_[article]) / avg_len_ : 0.0;
    double norm = params_.k1 * (1.0 - params_.b + params_.b * len_ratio);
    double total = 0.0;
    for (std::size_t token : query_tokens) {
        double f = static_cast<double>(tf(token, article));
        if (f == 0.0) continue;
        total += idf(token) * f * (params_.k1 + 1.0) / (f + norm);
    }
    return total;
}

std::vector<SearchHit> InvertedIndex::search_topk(const std::vector<std::size_t>& query_tokens,
                                                  std::size_t k) const {
    if (k < 1) throw ConfigError("bm25: k must be >= 1");
    std::unordered_map<std::size_t, double> acc;
    for (std::size_t token : query_tokens) {
        auto it = postings_.find(token);
        if (it == postings_.end()) continue;
        double w = idf(token);
        for (const Posting& p : it->second) {
            double len_ratio = avg_len_ > 0.0 ? static_cast<double>(doc_len_[p.article]) / avg_len_ : 0.0;
            double norm = params_.k1 * (1.0 - params_.b + params_.b * len_ratio);
            double f = static_cast<double>(p.tf);
            acc[p.article] += w * f * (params_.k1 + 1.0) / (f + norm);
        }
    }
    std::vector<SearchHit> hits;
    hits.reserve(acc.size());
    for (const auto& [article, s] : acc) {
        if (s > 0.0) hits.push_back(SearchHit{article, s});
    }
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.article < b.article;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

std::vector<std::size_t> InvertedIndex::mine_negatives(const std::vector<std::size_t>& query_tokens,
                                                       const std::vector<std::size_t>& relevant,
                                                       std::size_t n, std::uint64_t seed) const {
    if (n < 1) throw ConfigError("bm25: negative count must be >= 1");
    std::vector<bool> is_relevant(doc_count(), false);
    std::size_t distinct_relevant = 0;
    for (std::size_t r : relevant) {
        check_article(r);
        if (!is_relevant[r]) {
            is_relevant[r] = true;
            ++distinct_relevant;
        }
    }
    if (doc_count() < distinct_relevant + n) {
        throw ValidationError("bm25: corpus too small to mine " + std::to_string(n) +
                              " negatives next to " + std::to_string(distinct_relevant) +
                              " relevant articles");
    }

    std::vector<std::size_t> out;
    out.reserve(n);
    std::vector<bool> taken(doc_count(), false);
    for (const SearchHit& hit : search_topk(query_tokens, doc_count())) {
        if (out.size() == n) break;
        if (is_relevant[hit.article]) continue;
        out.push_back(hit.article);
        taken[hit.article] = true;
    }
    if (out.size() < n) {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < doc_count(); ++i) {
            if (!is_relevant[i] && !taken[i]) rest.push_back(i);
        }
        Rng rng(seed);
        rng.shuffle(rest);
        for (std::size_t i = 0; out.size() < n; ++i) out.push_back(rest[i]);
    }
    return out;
}

namespace {
constexpr std::uint32_t kIndexMagic = 0x53524958;  // "SRIX"
constexpr std::uint32_t kIndexVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T take(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw ValidationError("bm25: truncated index snapshot");
    return v;
}
}  // namespace

void InvertedIndex::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    put(out, kIndexMagic);
    put(out, kIndexVersion);
    put(out, params_.k1);
    put(out, params_.b);
    put(out, avg_len_);
    put(out, static_cast<std::uint64_t>(doc_len_.size()));
    for (std::size_t len : doc_len_) put(out, static_cast<std::uint64_t>(len));
    std::vector<std::size_t> tokens;
    tokens.reserve(postings_.size());
    for (const auto& [token, list] : postings_) tokens.push_back(token);
    std::sort(tokens.begin(), tokens.end());
    put(out, static_cast<std::uint64_t>(tokens.size()));
    for (std::size_t token : tokens) {
        const std::vector<Posting>& list = postings_.at(token);
        put(out, static_cast<std::uint64_t>(token));
        put(out, static_cast<std::uint64_t>(list.size()));
        for (const Posting& p : list) {
            put(out, static_cast<std::uint64_t>(p.article));
            put(out, static_cast<std::uint64_t>(p.tf));
        }
    }
}

InvertedIndex InvertedIndex::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path);
    if (take<std::uint32_t>(in) != kIndexMagic) throw ValidationError(path + ": not an index snapshot");
    std::uint32_t version = take<std::uint32_t>(in);
    if (version != kIndexVersion) {
        throw ValidationError(path + ": unsupported index snapshot version " +
                              std::to_string(version));
    }
    InvertedIndex idx;
    idx.params_.k1 = take<double>(in);
    idx.params_.b = take<double>(in);
    idx.avg_len_ = take<double>(in);
    std::uint64_t docs = take<std::uint64_t>(in);
    idx.doc_len_.resize(docs);
    for (std::uint64_t i = 0; i < docs; ++i) idx.doc_len_[i] = take<std::uint64_t>(in);
    std::uint64_t n_tokens = take<std::uint64_t>(in);
    for (std::uint64_t t = 0; t < n_tokens; ++t) {
        std::uint64_t token = take<std::uint64_t>(in);
        std::uint64_t len = take<std::uint64_t>(in);
        std::vector<Posting>& list = idx.postings_[token];
        list.resize(len);
        for (std::uint64_t i = 0; i < len; ++i) {
            list[i].article = take<std::uint64_t>(in);
            list[i].tf = take<std::uint64_t>(in);
        }
    }
    return idx;
}

InvertedIndex build_index(const Corpus& corpus, Bm25Params params) {
    return InvertedIndex(corpus, params);
}

}  // namespace statret
