#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "statret/corpus.hpp"
#include "statret/encoder.hpp"
#include "statret/tensor.hpp"

namespace statret {

enum class NodeType { Query, Article, Section, Chapter, Title, Book };

/// Closed set of relation kinds. Unit-to-unit edges are typed by the child
/// level (a section under a title still uses chapter-section); article-to-
/// unit edges always use section-article, the deepest unit standing in for
/// the section when a path is partial. Self pairs get their own type so the
/// attention softmax support is total.
enum class EdgeType { QueryArticle, SectionArticle, ChapterSection, TitleChapter, BookTitle, Self };
constexpr std::size_t kEdgeTypeCount = 6;

const char* node_type_name(NodeType t);
const char* edge_type_name(EdgeType t);

enum class GraphMode { Both, BipartiteOnly, StatuteOnly };

/// Accepts "both", "bipartite-only", "statute-only"; anything else throws
/// ConfigError listing the choices.
GraphMode parse_graph_mode(const std::string& name);
const char* graph_mode_name(GraphMode mode);

struct GraphNode {
    NodeType type = NodeType::Article;
    std::size_t ref = 0;  // article / unit / train-query index, per type
    std::string label;    // article id, unit key, or query id
};

struct GraphEdge {
    std::size_t a = 0, b = 0;  // undirected, stored with a < b
    EdgeType type = EdgeType::QueryArticle;
};

struct Neighbor {
    std::size_t node = 0;
    EdgeType type = EdgeType::Self;
};

/// Typed undirected graph over the training split: the query-article
/// bipartite core, the statute-hierarchy forest, or both. Every corpus
/// article is a node in every mode (isolated nodes are legal); test and
/// validation queries never appear.
struct HeteroGraph {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    GraphMode mode = GraphMode::Both;
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;
    std::vector<std::vector<Neighbor>> adj;  // per node, sorted by neighbor id

    std::vector<std::size_t> article_node;  // corpus article index -> node id
    std::vector<std::size_t> unit_node;     // corpus unit index -> node id or npos
    std::vector<std::size_t> query_node;    // train query index -> node id or npos

    std::size_t size() const { return nodes.size(); }
};

HeteroGraph build_graph(const Corpus& corpus, const std::vector<Query>& train_queries,
                        GraphMode mode);

/// Eval-mode initial features, one row per node: articles and structural
/// units (label text) through the article encoder, queries through the query
/// encoder.
Tensor init_node_features(const HeteroGraph& graph, const BiEncoder& encoder,
                          const Corpus& corpus, const std::vector<Query>& train_queries);

/// Line-delimited inspection dump: node records then edge records.
void write_graph_jsonl(const std::string& path, const HeteroGraph& graph);

}  // namespace statret
