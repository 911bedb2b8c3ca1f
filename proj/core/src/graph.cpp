#include "statret/graph.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "statret/errors.hpp"

namespace statret {

const char* node_type_name(NodeType t) {
    switch (t) {
        case NodeType::Query: return "query";
        case NodeType::Article: return "article";
        case NodeType::Section: return "section";
        case NodeType::Chapter: return "chapter";
        case NodeType::Title: return "title";
        case NodeType::Book: return "book";
    }
    return "?";
}

const char* edge_type_name(EdgeType t) {
    switch (t) {
        case EdgeType::QueryArticle: return "query-article";
        case EdgeType::SectionArticle: return "section-article";
        case EdgeType::ChapterSection: return "chapter-section";
        case EdgeType::TitleChapter: return "title-chapter";
        case EdgeType::BookTitle: return "book-title";
        case EdgeType::Self: return "self";
    }
    return "?";
}

GraphMode parse_graph_mode(const std::string& name) {
    if (name == "both") return GraphMode::Both;
    if (name == "bipartite-only") return GraphMode::BipartiteOnly;
    if (name == "statute-only") return GraphMode::StatuteOnly;
    throw ConfigError("unknown graph mode '" + name +
                      "' (choices: both, bipartite-only, statute-only)");
}

const char* graph_mode_name(GraphMode mode) {
    switch (mode) {
        case GraphMode::Both: return "both";
        case GraphMode::BipartiteOnly: return "bipartite-only";
        case GraphMode::StatuteOnly: return "statute-only";
    }
    return "?";
}

namespace {

NodeType unit_node_type(UnitLevel level) {
    switch (level) {
        case UnitLevel::Section: return NodeType::Section;
        case UnitLevel::Chapter: return NodeType::Chapter;
        case UnitLevel::Title: return NodeType::Title;
        case UnitLevel::Book: return NodeType::Book;
    }
    return NodeType::Section;
}

EdgeType child_link_type(UnitLevel child) {
    switch (child) {
        case UnitLevel::Section: return EdgeType::ChapterSection;
        case UnitLevel::Chapter: return EdgeType::TitleChapter;
        case UnitLevel::Title: return EdgeType::BookTitle;
        case UnitLevel::Book: break;  // roots have no parent
    }
    throw ValidationError("graph: a book node cannot have a parent unit");
}

void add_edge(HeteroGraph& g, std::size_t a, std::size_t b, EdgeType type) {
    if (a > b) std::swap(a, b);
    g.edges.push_back({a, b, type});
}

}  // namespace

HeteroGraph build_graph(const Corpus& corpus, const std::vector<Query>& train_queries,
                        GraphMode mode) {
    HeteroGraph g;
    g.mode = mode;
    bool with_statute = mode != GraphMode::BipartiteOnly;
    bool with_queries = mode != GraphMode::StatuteOnly;

    g.article_node.resize(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        g.article_node[i] = g.nodes.size();
        g.nodes.push_back({NodeType::Article, i, corpus.articles[i].id});
    }
    g.unit_node.assign(corpus.units.size(), HeteroGraph::npos);
    if (with_statute) {
        for (std::size_t u = 0; u < corpus.units.size(); ++u) {
            g.unit_node[u] = g.nodes.size();
            g.nodes.push_back({unit_node_type(corpus.units[u].level), u, corpus.units[u].key});
        }
    }
    g.query_node.assign(train_queries.size(), HeteroGraph::npos);
    if (with_queries) {
        for (std::size_t q = 0; q < train_queries.size(); ++q) {
            g.query_node[q] = g.nodes.size();
            g.nodes.push_back({NodeType::Query, q, train_queries[q].id});
        }
    }

    if (with_statute) {
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            int u = corpus.article_unit[i];
            if (u >= 0) {
                add_edge(g, g.article_node[i], g.unit_node[static_cast<std::size_t>(u)],
                         EdgeType::SectionArticle);
            }
        }
        for (std::size_t u = 0; u < corpus.units.size(); ++u) {
            int parent = corpus.units[u].parent;
            if (parent >= 0) {
                add_edge(g, g.unit_node[u], g.unit_node[static_cast<std::size_t>(parent)],
                         child_link_type(corpus.units[u].level));
            }
        }
    }
    if (with_queries) {
        for (std::size_t q = 0; q < train_queries.size(); ++q) {
            for (const std::string& rid : train_queries[q].relevant_ids) {
                add_edge(g, g.query_node[q], g.article_node[corpus.article_index(rid)],
                         EdgeType::QueryArticle);
            }
        }
    }

    g.adj.resize(g.nodes.size());
    for (const GraphEdge& e : g.edges) {
        g.adj[e.a].push_back({e.b, e.type});
        g.adj[e.b].push_back({e.a, e.type});
    }
    for (std::vector<Neighbor>& list : g.adj) {
        std::sort(list.begin(), list.end(),
                  [](const Neighbor& x, const Neighbor& y) { return x.node < y.node; });
    }
    return g;
}

Tensor init_node_features(const HeteroGraph& graph, const BiEncoder& encoder,
                          const Corpus& corpus, const std::vector<Query>& train_queries) {
    std::size_t d = encoder.config().dim;
    Tensor features = Tensor::zeros({graph.size(), d});
    for (std::size_t n = 0; n < graph.size(); ++n) {
        const GraphNode& node = graph.nodes[n];
        Tensor row;
        switch (node.type) {
            case NodeType::Query:
                row = encoder.encode_query_eval(train_queries[node.ref].tokens);
                break;
            case NodeType::Article:
                row = encoder.encode_article_eval(corpus.articles[node.ref].tokens);
                break;
            default:
                row = encoder.encode_article_eval(
                    corpus.vocab.encode(corpus.units[node.ref].label));
                break;
        }
        for (std::size_t j = 0; j < d; ++j) features.at(n, j) = row[j];
    }
    return features;
}

void write_graph_jsonl(const std::string& path, const HeteroGraph& graph) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (std::size_t n = 0; n < graph.size(); ++n) {
        nlohmann::json j;
        j["node"] = n;
        j["type"] = node_type_name(graph.nodes[n].type);
        j["label"] = graph.nodes[n].label;
        out << j.dump() << "\n";
    }
    for (const GraphEdge& e : graph.edges) {
        nlohmann::json j;
        j["src"] = e.a;
        j["dst"] = e.b;
        j["type"] = edge_type_name(e.type);
        out << j.dump() << "\n";
    }
}

}  // namespace statret
