#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace statret {

/// Statute-hierarchy levels an article may carry, outermost first. Any prefix
/// of the chain may be absent; present levels keep their containment order.
struct HierarchyPath {
    std::optional<std::string> book;
    std::optional<std::string> title;
    std::optional<std::string> chapter;
    std::optional<std::string> section;

    bool empty() const { return !book && !title && !chapter && !section; }
};

struct Article {
    std::string id;
    std::string text;
    HierarchyPath path;
    std::vector<std::size_t> tokens;  // filled when the corpus is assembled
};

struct Query {
    std::string id;
    std::string text;
    std::vector<std::string> relevant_ids;  // non-empty; every id exists
    std::vector<std::size_t> tokens;
};

enum class UnitLevel { Section, Chapter, Title, Book };

const char* unit_level_name(UnitLevel level);

/// One node of the statute-topology forest (a section, chapter, title or
/// book). Identity is path-scoped: two chapters with the same label under
/// different titles are distinct units.
struct StructuralUnit {
    std::string key;    // full path key, unique within the corpus
    std::string label;  // identifier string from the records; used as text
    UnitLevel level = UnitLevel::Section;
    int parent = -1;    // index into Corpus::units, -1 for roots
};

/// Token-to-index map frozen at corpus assembly. Index 0 is the [CLS]-role
/// token, index 1 the unknown bucket.
class Vocabulary {
public:
    static constexpr std::size_t kCls = 0;
    static constexpr std::size_t kUnk = 1;

    Vocabulary();

    std::size_t add(const std::string& token);
    std::size_t lookup(const std::string& token) const;  // kUnk when absent
    std::size_t size() const { return tokens_.size(); }
    const std::string& token(std::size_t i) const { return tokens_[i]; }

    /// Lowercase, split on non-alphanumeric runs, map through the table.
    std::vector<std::size_t> encode(const std::string& text) const;

private:
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> tokens_;
};

/// Splits text into lowercase word tokens. Bytes >= 0x80 are treated as word
/// characters so UTF-8 sequences survive intact.
std::vector<std::string> split_words(const std::string& text);

struct Corpus {
    std::vector<Article> articles;
    std::vector<StructuralUnit> units;
    std::vector<int> article_unit;  // deepest unit per article, -1 if none
    Vocabulary vocab;

    std::size_t article_index(const std::string& id) const;  // throws on miss
    bool has_article(const std::string& id) const;
    std::size_t size() const { return articles.size(); }

private:
    friend Corpus assemble_corpus(std::vector<Article>, const std::vector<std::vector<Query>*>&);
    std::unordered_map<std::string, std::size_t> by_id_;
};

struct DatasetSplit {
    std::vector<Query> train;
    std::vector<Query> validation;
    std::vector<Query> test;
};

struct LoadedDataset {
    Corpus corpus;
    DatasetSplit split;
};

/// Validates articles + queries, builds the vocabulary over article text,
/// hierarchy labels, and query text, and tokenizes everything in place.
/// Queries passed here are mutated (tokens filled) and validated against the
/// corpus; dangling references fail listing every missing id.
Corpus assemble_corpus(std::vector<Article> articles,
                       const std::vector<std::vector<Query>*>& query_sets);

std::vector<Article> read_articles_jsonl(const std::string& path);
std::vector<Query> read_queries_jsonl(const std::string& path);
void write_articles_jsonl(const std::string& path, const std::vector<Article>& articles);
void write_queries_jsonl(const std::string& path, const std::vector<Query>& queries);

/// Two-file load: validated corpus plus tokenized queries.
std::pair<Corpus, std::vector<Query>> load_corpus(const std::string& articles_path,
                                                  const std::string& queries_path);

/// Directory layout: articles.jsonl, queries_train.jsonl, queries_test.jsonl,
/// and optionally queries_val.jsonl. Split query-id sets must be disjoint.
LoadedDataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const Corpus& corpus, const DatasetSplit& split);

/// Non-overlapping chunks of chunk_len tokens, each prefixed with the
/// [CLS]-role token; the last chunk may be short. Empty input yields a single
/// CLS-only chunk.
std::vector<std::vector<std::size_t>> chunk_tokens(const std::vector<std::size_t>& tokens,
                                                   std::size_t chunk_len);

}  // namespace statret
