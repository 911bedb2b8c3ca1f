#include "statret/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "statret/errors.hpp"

namespace statret {

using nlohmann::json;

const char* unit_level_name(UnitLevel level) {
    switch (level) {
        case UnitLevel::Section: return "section";
        case UnitLevel::Chapter: return "chapter";
        case UnitLevel::Title: return "title";
        case UnitLevel::Book: return "book";
    }
    return "?";
}

Vocabulary::Vocabulary() {
    add("[cls]");
    add("[unk]");
}

std::size_t Vocabulary::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    std::size_t id = tokens_.size();
    index_.emplace(token, id);
    tokens_.push_back(token);
    return id;
}

std::size_t Vocabulary::lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::string& text) const {
    std::vector<std::size_t> out;
    for (const std::string& w : split_words(text)) out.push_back(lookup(w));
    return out;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        bool word_char = std::isalnum(c) != 0 || c >= 0x80;
        if (word_char) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

std::size_t Corpus::article_index(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw ValidationError("unknown article id: " + id);
    return it->second;
}

bool Corpus::has_article(const std::string& id) const { return by_id_.count(id) > 0; }

namespace {

// Path-scoped unit key so identical labels under different parents stay
// distinct nodes.
std::string unit_key(const std::vector<std::pair<UnitLevel, std::string>>& chain,
                     std::size_t depth) {
    std::string key;
    for (std::size_t i = 0; i <= depth; ++i) {
        key += unit_level_name(chain[i].first);
        key += '=';
        key += chain[i].second;
        if (i != depth) key += '|';
    }
    return key;
}

}  // namespace

Corpus assemble_corpus(std::vector<Article> articles,
                       const std::vector<std::vector<Query>*>& query_sets) {
    Corpus corpus;
    corpus.articles = std::move(articles);

    for (std::size_t i = 0; i < corpus.articles.size(); ++i) {
        const Article& a = corpus.articles[i];
        if (a.id.empty()) throw ValidationError("article at position " + std::to_string(i) + " has empty id");
        if (!corpus.by_id_.emplace(a.id, i).second) {
            throw ValidationError("duplicate article id: " + a.id);
        }
    }

    // structural units
    std::unordered_map<std::string, std::size_t> unit_index;
    corpus.article_unit.assign(corpus.articles.size(), -1);
    for (std::size_t i = 0; i < corpus.articles.size(); ++i) {
        const HierarchyPath& p = corpus.articles[i].path;
        std::vector<std::pair<UnitLevel, std::string>> chain;
        if (p.book) chain.emplace_back(UnitLevel::Book, *p.book);
        if (p.title) chain.emplace_back(UnitLevel::Title, *p.title);
        if (p.chapter) chain.emplace_back(UnitLevel::Chapter, *p.chapter);
        if (p.section) chain.emplace_back(UnitLevel::Section, *p.section);
        int parent = -1;
        for (std::size_t d = 0; d < chain.size(); ++d) {
            std::string key = unit_key(chain, d);
            auto it = unit_index.find(key);
            std::size_t idx;
            if (it == unit_index.end()) {
                idx = corpus.units.size();
                unit_index.emplace(key, idx);
                corpus.units.push_back(StructuralUnit{key, chain[d].second, chain[d].first, parent});
            } else {
                idx = it->second;
            }
            parent = static_cast<int>(idx);
        }
        corpus.article_unit[i] = parent;  // deepest present unit, or -1
    }

    // vocabulary: article text, hierarchy labels, then query text, in order
    for (const Article& a : corpus.articles) {
        for (const std::string& w : split_words(a.text)) corpus.vocab.add(w);
    }
    for (const StructuralUnit& u : corpus.units) {
        for (const std::string& w : split_words(u.label)) corpus.vocab.add(w);
    }
    for (const auto* qs : query_sets) {
        for (const Query& q : *qs) {
            for (const std::string& w : split_words(q.text)) corpus.vocab.add(w);
        }
    }

    // validate queries: ids unique, relevant sets non-empty and resolvable
    std::set<std::string> qids;
    std::vector<std::string> dangling;
    for (const auto* qs : query_sets) {
        for (const Query& q : *qs) {
            if (!qids.insert(q.id).second) throw ValidationError("duplicate query id: " + q.id);
            if (q.relevant_ids.empty()) {
                throw ValidationError("query " + q.id + " has no relevant articles");
            }
            for (const std::string& rid : q.relevant_ids) {
                if (!corpus.has_article(rid)) dangling.push_back(q.id + " -> " + rid);
            }
        }
    }
    if (!dangling.empty()) {
        std::string msg = "dangling relevant article references:";
        for (const std::string& d : dangling) msg += "\n  " + d;
        throw ValidationError(msg);
    }

    // tokenize in place
    for (Article& a : corpus.articles) a.tokens = corpus.vocab.encode(a.text);
    for (auto* qs : query_sets) {
        for (Query& q : *qs) q.tokens = corpus.vocab.encode(q.text);
    }
    return corpus;
}

namespace {

std::string id_field(const json& j, const char* field, const std::string& where) {
    if (!j.contains(field)) throw ValidationError(where + ": missing field '" + field + "'");
    const json& v = j.at(field);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw ValidationError(where + ": field '" + field + "' must be a string or integer");
}

json parse_line(const std::string& line, const std::string& where) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ValidationError(where + ": not a JSON object");
    }
    return j;
}

}  // namespace

std::vector<Article> read_articles_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::vector<Article> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        json j = parse_line(line, where);
        Article a;
        a.id = id_field(j, "id", where);
        if (!j.contains("text")) throw ValidationError(where + ": missing field 'text'");
        a.text = j.at("text").get<std::string>();
        if (j.contains("book")) a.path.book = j.at("book").get<std::string>();
        if (j.contains("title")) a.path.title = j.at("title").get<std::string>();
        if (j.contains("chapter")) a.path.chapter = j.at("chapter").get<std::string>();
        if (j.contains("section")) a.path.section = j.at("section").get<std::string>();
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<Query> read_queries_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open " + path);
    std::vector<Query> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        json j = parse_line(line, where);
        Query q;
        q.id = id_field(j, "id", where);
        if (!j.contains("text")) throw ValidationError(where + ": missing field 'text'");
        q.text = j.at("text").get<std::string>();
        if (!j.contains("article_ids") || !j.at("article_ids").is_array()) {
            throw ValidationError(where + ": missing or non-array field 'article_ids'");
        }
        for (const json& v : j.at("article_ids")) {
            if (v.is_string()) {
                q.relevant_ids.push_back(v.get<std::string>());
            } else if (v.is_number_integer()) {
                q.relevant_ids.push_back(std::to_string(v.get<long long>()));
            } else {
                throw ValidationError(where + ": article_ids entries must be strings or integers");
            }
        }
        out.push_back(std::move(q));
    }
    return out;
}

void write_articles_jsonl(const std::string& path, const std::vector<Article>& articles) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (const Article& a : articles) {
        json j;
        j["id"] = a.id;
        j["text"] = a.text;
        if (a.path.book) j["book"] = *a.path.book;
        if (a.path.title) j["title"] = *a.path.title;
        if (a.path.chapter) j["chapter"] = *a.path.chapter;
        if (a.path.section) j["section"] = *a.path.section;
        out << j.dump() << "\n";
    }
}

void write_queries_jsonl(const std::string& path, const std::vector<Query>& queries) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (const Query& q : queries) {
        json j;
        j["id"] = q.id;
        j["text"] = q.text;
        j["article_ids"] = q.relevant_ids;
        out << j.dump() << "\n";
    }
}

std::pair<Corpus, std::vector<Query>> load_corpus(const std::string& articles_path,
                                                  const std::string& queries_path) {
    std::vector<Article> articles = read_articles_jsonl(articles_path);
    std::vector<Query> queries = read_queries_jsonl(queries_path);
    Corpus corpus = assemble_corpus(std::move(articles), {&queries});
    return {std::move(corpus), std::move(queries)};
}

LoadedDataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    fs::path base(dir);
    LoadedDataset ds;
    std::vector<Article> articles = read_articles_jsonl((base / "articles.jsonl").string());
    ds.split.train = read_queries_jsonl((base / "queries_train.jsonl").string());
    if (fs::exists(base / "queries_val.jsonl")) {
        ds.split.validation = read_queries_jsonl((base / "queries_val.jsonl").string());
    }
    ds.split.test = read_queries_jsonl((base / "queries_test.jsonl").string());
    ds.corpus = assemble_corpus(std::move(articles),
                                {&ds.split.train, &ds.split.validation, &ds.split.test});
    return ds;
}

void save_dataset(const std::string& dir, const Corpus& corpus, const DatasetSplit& split) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    fs::path base(dir);
    write_articles_jsonl((base / "articles.jsonl").string(), corpus.articles);
    write_queries_jsonl((base / "queries_train.jsonl").string(), split.train);
    if (!split.validation.empty()) {
        write_queries_jsonl((base / "queries_val.jsonl").string(), split.validation);
    }
    write_queries_jsonl((base / "queries_test.jsonl").string(), split.test);
}

std::vector<std::vector<std::size_t>> chunk_tokens(const std::vector<std::size_t>& tokens,
                                                   std::size_t chunk_len) {
    if (chunk_len < 1) throw ConfigError("chunk_len must be >= 1");
    std::vector<std::vector<std::size_t>> chunks;
    if (tokens.empty()) {
        chunks.push_back({Vocabulary::kCls});
        return chunks;
    }
    for (std::size_t start = 0; start < tokens.size(); start += chunk_len) {
        std::size_t end = std::min(tokens.size(), start + chunk_len);
        std::vector<std::size_t> chunk;
        chunk.reserve(end - start + 1);
        chunk.push_back(Vocabulary::kCls);
        chunk.insert(chunk.end(), tokens.begin() + start, tokens.begin() + end);
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

}  // namespace statret
