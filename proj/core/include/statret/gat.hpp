#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "statret/graph.hpp"
#include "statret/params.hpp"
#include "statret/rng.hpp"
#include "statret/tape.hpp"

namespace statret {

struct GatConfig {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t dim = 64;  // node feature dim; head width is dim / heads
    double leaky_slope = 0.2;

    std::size_t head_dim() const { return dim / heads; }
    void validate() const;  // throws ConfigError
};

/// Per-layer attention rows: attention[node] is {heads, support size} where
/// the support is the self pair first, then neighbors ascending by node id.
using AttentionRows = std::vector<Tensor>;

/// Edge-typed multi-head graph attention stack. Each head scores a pair
/// through a LeakyReLU over the concatenated self, neighbor and edge-type
/// transforms, softmaxes over the support, aggregates the self transform of
/// the node with the neighbor transforms, and applies the nonlinearity
/// before heads are concatenated. A residual connection adds the layer
/// input; layer widths never change, so the residual is always the
/// identity.
class GatStack {
public:
    GatStack() = default;
    GatStack(ParamStore& store, const std::string& prefix, GatConfig cfg, Rng& init);

    /// adj holds, for every row of features, its neighbor list in a fixed
    /// order (the full graph keeps ascending node id; subgraphs keep the
    /// full graph's order). When attention is given it receives one
    /// AttentionRows per layer.
    Var forward(Tape& t, const std::vector<std::vector<Neighbor>>& adj, Var features,
                std::vector<AttentionRows>* attention = nullptr) const;

    /// Full-graph forward on a private tape; plain features out.
    Tensor forward_eval(const HeteroGraph& graph, const Tensor& features) const;

    const GatConfig& config() const { return cfg_; }
    std::vector<Parameter*> params(ParamStore& store) const;

private:
    struct Head {
        Parameter *ws, *wt, *we, *a;
    };
    struct Layer {
        std::vector<Head> heads;
        Parameter* edge_emb;  // {edge type count, dim}
    };
    std::vector<Layer> layers_;
    GatConfig cfg_;
    std::string prefix_;
};

/// L-hop ball around the seeds: nodes in discovery order (seeds first, then
/// each hop's frontier ascending by id), with the induced edges relabeled to
/// local ids. Neighbor lists stay ordered by global id, so a forward pass
/// over the batch reproduces full-graph seed outputs bit for bit.
struct SubgraphBatch {
    std::vector<std::size_t> nodes;  // global node ids; [0, seed_count) are the seeds
    std::size_t seed_count = 0;
    std::vector<std::vector<Neighbor>> adj;  // local ids
};

/// Throws ValidationError for out-of-range or duplicate seeds.
SubgraphBatch sample_subgraph(const HeteroGraph& graph, const std::vector<std::size_t>& seeds,
                              std::size_t hops);

}  // namespace statret
