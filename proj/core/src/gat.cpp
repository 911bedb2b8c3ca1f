#include "statret/gat.hpp"

#include <algorithm>
#include <unordered_map>

#include "statret/errors.hpp"

namespace statret {

void GatConfig::validate() const {
    if (layers < 1) throw ConfigError("gat: layers must be >= 1");
    if (heads < 1) throw ConfigError("gat: heads must be >= 1");
    if (dim < 1 || dim % heads != 0) {
        throw ConfigError("gat: dim must be a positive multiple of heads");
    }
    if (leaky_slope <= 0.0 || leaky_slope >= 1.0) {
        throw ConfigError("gat: leaky slope must lie in (0, 1)");
    }
}

GatStack::GatStack(ParamStore& store, const std::string& prefix, GatConfig cfg, Rng& init)
    : cfg_(cfg), prefix_(prefix) {
    cfg.validate();
    std::size_t h = cfg.head_dim();
    auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        return &store.create(name, Tensor::randn({rows, cols}, init, 0.02));
    };
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        Layer layer;
        std::string lp = prefix + "l" + std::to_string(l) + ".";
        for (std::size_t k = 0; k < cfg.heads; ++k) {
            std::string hp = lp + "h" + std::to_string(k) + ".";
            Head head;
            head.ws = weight(hp + "ws", h, cfg.dim);
            head.wt = weight(hp + "wt", h, cfg.dim);
            head.we = weight(hp + "we", h, cfg.dim);
            head.a = &store.create(hp + "a", Tensor::randn({3 * h}, init, 0.02));
            layer.heads.push_back(head);
        }
        layer.edge_emb = weight(lp + "edge", kEdgeTypeCount, cfg.dim);
        layers_.push_back(layer);
    }
}

Var GatStack::forward(Tape& t, const std::vector<std::vector<Neighbor>>& adj, Var features,
                      std::vector<AttentionRows>* attention) const {
    const Tensor& f = t.value(features);
    if (f.rank() != 2 || f.cols() != cfg_.dim) {
        throw ShapeError("gat: features " + f.shape_str() + " do not match dim " +
                         std::to_string(cfg_.dim));
    }
    std::size_t n = f.rows();
    if (adj.size() != n) throw ShapeError("gat: adjacency size does not match feature rows");
    std::size_t h = cfg_.head_dim();
    if (attention) attention->clear();

    Var x = features;
    for (const Layer& layer : layers_) {
        // Every arithmetic op below works on one node's row at a time, so a
        // row's float sequence never depends on how many other nodes share
        // the batch; that is what makes subgraph outputs bitwise-equal to
        // full-graph ones.
        std::vector<Var> wsT(cfg_.heads), wtT(cfg_.heads);
        std::vector<Var> a1(cfg_.heads), a2(cfg_.heads);
        std::vector<Var> w(cfg_.heads);
        Var emb = t.leaf(*layer.edge_emb);
        for (std::size_t k = 0; k < cfg_.heads; ++k) {
            const Head& head = layer.heads[k];
            wsT[k] = t.transpose(t.leaf(*head.ws));
            wtT[k] = t.transpose(t.leaf(*head.wt));
            Var E = t.matmul(emb, t.transpose(t.leaf(*head.we)));  // {types, h}
            // the attention dot distributes over the three concatenated
            // segments: a1 against the self part, a2 neighbor, a3 edge
            Var arow = t.reshape(t.leaf(*head.a), {1, 3 * h});
            a1[k] = t.reshape(t.slice_cols(arow, 0, h), {h, 1});
            a2[k] = t.reshape(t.slice_cols(arow, h, 2 * h), {h, 1});
            Var a3 = t.reshape(t.slice_cols(arow, 2 * h, 3 * h), {h, 1});
            w[k] = t.reshape(t.matmul(t.leaky_relu(E, cfg_.leaky_slope), a3), {kEdgeTypeCount});
        }

        // first pass: per-node, per-head transforms and attention terms
        std::vector<std::vector<Var>> s(cfg_.heads), tn(cfg_.heads);
        std::vector<std::vector<Var>> u_parts(cfg_.heads), v_parts(cfg_.heads);
        for (std::size_t i = 0; i < n; ++i) {
            Var xi = t.gather_rows(x, {i});
            for (std::size_t k = 0; k < cfg_.heads; ++k) {
                Var si = t.matmul(xi, wsT[k]);
                Var ti = t.matmul(xi, wtT[k]);
                s[k].push_back(si);
                tn[k].push_back(ti);
                u_parts[k].push_back(t.matmul(t.leaky_relu(si, cfg_.leaky_slope), a1[k]));
                v_parts[k].push_back(t.matmul(t.leaky_relu(ti, cfg_.leaky_slope), a2[k]));
            }
        }
        std::vector<Var> u(cfg_.heads), v(cfg_.heads), T(cfg_.heads);
        for (std::size_t k = 0; k < cfg_.heads; ++k) {
            u[k] = t.reshape(n == 1 ? u_parts[k][0] : t.concat_rows(u_parts[k]), {n});
            v[k] = t.reshape(n == 1 ? v_parts[k][0] : t.concat_rows(v_parts[k]), {n});
            T[k] = n == 1 ? tn[k][0] : t.concat_rows(tn[k]);
        }

        AttentionRows rows_out;
        if (attention) rows_out.resize(n);
        std::vector<Var> node_rows;
        node_rows.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::vector<Neighbor>& nbrs = adj[i];
            std::size_t m = nbrs.size() + 1;
            std::vector<std::size_t> sup_nodes(m), sup_types(m), rep(m, i);
            sup_nodes[0] = i;
            sup_types[0] = static_cast<std::size_t>(EdgeType::Self);
            std::vector<std::size_t> nbr_ids(nbrs.size());
            for (std::size_t j = 0; j < nbrs.size(); ++j) {
                sup_nodes[j + 1] = nbrs[j].node;
                sup_types[j + 1] = static_cast<std::size_t>(nbrs[j].type);
                nbr_ids[j] = nbrs[j].node;
            }

            if (attention) rows_out[i] = Tensor::zeros({cfg_.heads, m});
            std::vector<Var> head_outs;
            head_outs.reserve(cfg_.heads);
            for (std::size_t k = 0; k < cfg_.heads; ++k) {
                Var logits = t.add(t.add(t.gather_elems(u[k], rep),
                                         t.gather_elems(v[k], sup_nodes)),
                                   t.gather_elems(w[k], sup_types));
                Var alpha = t.row_softmax(t.reshape(logits, {1, m}));
                if (attention) {
                    const Tensor& av = t.value(alpha);
                    for (std::size_t j = 0; j < m; ++j) rows_out[i].at(k, j) = av[j];
                }
                std::vector<Var> parts;
                parts.push_back(s[k][i]);
                if (!nbr_ids.empty()) parts.push_back(t.gather_rows(T[k], nbr_ids));
                Var msgs = parts.size() == 1 ? parts[0] : t.concat_rows(parts);  // {m, h}
                head_outs.push_back(t.leaky_relu(t.matmul(alpha, msgs), cfg_.leaky_slope));
            }
            node_rows.push_back(cfg_.heads == 1 ? head_outs[0] : t.concat_cols(head_outs));
        }
        Var out = n == 1 ? node_rows[0] : t.concat_rows(node_rows);
        x = t.add(out, x);  // residual, identity projection (widths are equal)
        if (attention) attention->push_back(std::move(rows_out));
    }
    return x;
}

Tensor GatStack::forward_eval(const HeteroGraph& graph, const Tensor& features) const {
    Tape t;
    Var f = t.constant(features);
    Var out = forward(t, graph.adj, f);
    return t.value(out);
}

std::vector<Parameter*> GatStack::params(ParamStore& store) const {
    return store.with_prefix(prefix_);
}

SubgraphBatch sample_subgraph(const HeteroGraph& graph, const std::vector<std::size_t>& seeds,
                              std::size_t hops) {
    SubgraphBatch batch;
    std::unordered_map<std::size_t, std::size_t> local;
    for (std::size_t s : seeds) {
        if (s >= graph.size()) {
            throw ValidationError("subgraph: seed " + std::to_string(s) + " is not a node");
        }
        if (!local.emplace(s, batch.nodes.size()).second) {
            throw ValidationError("subgraph: duplicate seed " + std::to_string(s));
        }
        batch.nodes.push_back(s);
    }
    batch.seed_count = seeds.size();

    std::vector<std::size_t> frontier = batch.nodes;
    for (std::size_t hop = 0; hop < hops && !frontier.empty(); ++hop) {
        std::vector<std::size_t> next;
        for (std::size_t node : frontier) {
            for (const Neighbor& nb : graph.adj[node]) {
                if (local.emplace(nb.node, 0).second) next.push_back(nb.node);
            }
        }
        std::sort(next.begin(), next.end());
        for (std::size_t node : next) {
            local[node] = batch.nodes.size();
            batch.nodes.push_back(node);
        }
        frontier = std::move(next);
    }

    batch.adj.resize(batch.nodes.size());
    for (std::size_t i = 0; i < batch.nodes.size(); ++i) {
        // keep only ball members; global-id order is preserved by the
        // source adjacency, which keeps reductions bitwise-stable
        for (const Neighbor& nb : graph.adj[batch.nodes[i]]) {
            auto it = local.find(nb.node);
            if (it != local.end()) batch.adj[i].push_back({it->second, nb.type});
        }
    }
    return batch;
}

}  // namespace statret
