#include "statret/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "statret/errors.hpp"

namespace statret {

void EncoderConfig::validate() const {
    if (dim < 1) throw ConfigError("encoder: dim must be >= 1");
    if (heads < 1) throw ConfigError("encoder: heads must be >= 1");
    if (dim % heads != 0) {
        throw ConfigError("encoder: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    }
    if (layers < 1) throw ConfigError("encoder: layers must be >= 1");
    if (ff_dim < 1) throw ConfigError("encoder: ff_dim must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must lie in [0,1)");
    if (chunk_len < 1) throw ConfigError("encoder: chunk_len must be >= 1");
    if (max_chunks < 1) throw ConfigError("encoder: max_chunks must be >= 1");
}

namespace {

Parameter* make_weight(ParamStore& store, const std::string& name, std::size_t rows,
                       std::size_t cols, Rng& init) {
    Tensor t = Tensor::randn({rows, cols}, init, 0.02);
    return &store.create(name, std::move(t));
}

Parameter* make_vector(ParamStore& store, const std::string& name, std::size_t n, double fill) {
    Tensor t = Tensor::full({n}, fill);
    return &store.create(name, std::move(t));
}

}  // namespace

TransformerStack::TransformerStack(ParamStore& store, const std::string& prefix,
                                   const EncoderConfig& cfg, Rng& init)
    : dim_(cfg.dim), heads_(cfg.heads), dropout_(cfg.dropout) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::string p = prefix + "layer" + std::to_string(l) + ".";
        Layer layer;
        layer.wq = make_weight(store, p + "wq", cfg.dim, cfg.dim, init);
        layer.bq = make_vector(store, p + "bq", cfg.dim, 0.0);
        layer.wk = make_weight(store, p + "wk", cfg.dim, cfg.dim, init);
        layer.bk = make_vector(store, p + "bk", cfg.dim, 0.0);
        layer.wv = make_weight(store, p + "wv", cfg.dim, cfg.dim, init);
        layer.bv = make_vector(store, p + "bv", cfg.dim, 0.0);
        layer.wo = make_weight(store, p + "wo", cfg.dim, cfg.dim, init);
        layer.bo = make_vector(store, p + "bo", cfg.dim, 0.0);
        layer.ln1_g = make_vector(store, p + "ln1_g", cfg.dim, 1.0);
        layer.ln1_b = make_vector(store, p + "ln1_b", cfg.dim, 0.0);
        layer.w1 = make_weight(store, p + "w1", cfg.dim, cfg.ff_dim, init);
        layer.b1 = make_vector(store, p + "b1", cfg.ff_dim, 0.0);
        layer.w2 = make_weight(store, p + "w2", cfg.ff_dim, cfg.dim, init);
        layer.b2 = make_vector(store, p + "b2", cfg.dim, 0.0);
        layer.ln2_g = make_vector(store, p + "ln2_g", cfg.dim, 1.0);
        layer.ln2_b = make_vector(store, p + "ln2_b", cfg.dim, 0.0);
        layers_.push_back(layer);
    }
}

Var TransformerStack::forward(Tape& t, Var x, bool train, Rng& dropout_rng) const {
    std::size_t head_dim = dim_ / heads_;
    double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    double rate = train ? dropout_ : 0.0;

    for (const Layer& l : layers_) {
        Var q = t.add_bias(t.matmul(x, t.leaf(*l.wq)), t.leaf(*l.bq));
        Var k = t.add_bias(t.matmul(x, t.leaf(*l.wk)), t.leaf(*l.bk));
        Var v = t.add_bias(t.matmul(x, t.leaf(*l.wv)), t.leaf(*l.bv));

        std::vector<Var> head_outs;
        head_outs.reserve(heads_);
        for (std::size_t h = 0; h < heads_; ++h) {
            std::size_t c0 = h * head_dim, c1 = (h + 1) * head_dim;
            Var qh = t.slice_cols(q, c0, c1);
            Var kh = t.slice_cols(k, c0, c1);
            Var vh = t.slice_cols(v, c0, c1);
            Var logits = t.scale(t.matmul(qh, t.transpose(kh)), att_scale);
            Var att = t.row_softmax(logits);
            head_outs.push_back(t.matmul(att, vh));
        }
        Var o = t.add_bias(t.matmul(t.concat_cols(head_outs), t.leaf(*l.wo)), t.leaf(*l.bo));
        o = t.dropout(o, rate, dropout_rng);
        x = t.layer_norm(t.add(x, o), t.leaf(*l.ln1_g), t.leaf(*l.ln1_b));

        Var f = t.gelu(t.add_bias(t.matmul(x, t.leaf(*l.w1)), t.leaf(*l.b1)));
        f = t.add_bias(t.matmul(f, t.leaf(*l.w2)), t.leaf(*l.b2));
        f = t.dropout(f, rate, dropout_rng);
        x = t.layer_norm(t.add(x, f), t.leaf(*l.ln2_g), t.leaf(*l.ln2_b));
    }
    return x;
}

BiEncoder::BiEncoder(ParamStore& store, EncoderConfig cfg, std::size_t vocab_size, Rng& init)
    : cfg_(cfg), vocab_size_(vocab_size) {
    cfg_.validate();
    if (vocab_size < 2) throw ConfigError("encoder: vocabulary must hold the reserved tokens");

    tok_emb_ = make_weight(store, "tok_emb", vocab_size, cfg_.dim, init);
    q_pos_ = make_weight(store, "q_enc.pos", cfg_.chunk_len + 1, cfg_.dim, init);
    a_pos_ = make_weight(store, "a_enc.pos", cfg_.chunk_len + 1, cfg_.dim, init);
    chunk_pos_ = make_weight(store, "a_enc.chunk_pos", cfg_.max_chunks, cfg_.dim, init);
    q_stack_ = TransformerStack(store, "q_enc.", cfg_, init);
    a_stack_ = TransformerStack(store, "a_enc.", cfg_, init);
    if (cfg_.hierarchical) {
        a2_stack_ = TransformerStack(store, "a_enc2.", cfg_, init);
    }
}

Var BiEncoder::embed(Tape& t, const std::vector<std::size_t>& ids, Parameter* pos) const {
    Var x = t.gather_rows(t.leaf(*tok_emb_), ids);
    std::vector<std::size_t> pos_idx(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) pos_idx[i] = i;
    return t.add(x, t.gather_rows(t.leaf(*pos), pos_idx));
}

Var BiEncoder::encode_sequence(Tape& t, const TransformerStack& stack,
                               const std::vector<std::size_t>& tokens, Parameter* pos, bool train,
                               Rng& dropout_rng) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(Vocabulary::kCls);
    for (std::size_t tok : tokens) {
        if (ids.size() > cfg_.chunk_len) {
            ++truncations_;
            break;
        }
        if (tok >= vocab_size_) throw ValidationError("encoder: token id out of vocabulary");
        ids.push_back(tok);
    }
    Var x = stack.forward(t, embed(t, ids, pos), train, dropout_rng);
    return t.reshape(t.gather_rows(x, {0}), {cfg_.dim});
}

Var BiEncoder::encode_query(Tape& t, const std::vector<std::size_t>& tokens, bool train,
                            Rng& dropout_rng) const {
    return encode_sequence(t, q_stack_, tokens, q_pos_, train, dropout_rng);
}

Var BiEncoder::encode_article(Tape& t, const std::vector<std::size_t>& tokens, bool train,
                              Rng& dropout_rng) const {
    if (!cfg_.hierarchical) {
        return encode_sequence(t, a_stack_, tokens, a_pos_, train, dropout_rng);
    }
    std::vector<std::vector<std::size_t>> chunks = chunk_tokens(tokens, cfg_.chunk_len);
    if (chunks.size() > cfg_.max_chunks) {
        chunks.resize(cfg_.max_chunks);
        ++truncations_;
    }
    std::vector<Var> cls_rows;
    cls_rows.reserve(chunks.size());
    for (const auto& chunk : chunks) {
        for (std::size_t tok : chunk) {
            if (tok >= vocab_size_) throw ValidationError("encoder: token id out of vocabulary");
        }
        Var x = a_stack_.forward(t, embed(t, chunk, a_pos_), train, dropout_rng);
        cls_rows.push_back(t.gather_rows(x, {0}));  // {1, dim}
    }
    Var cls = t.concat_rows(cls_rows);  // {nc, dim}
    std::vector<std::size_t> pos_idx(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) pos_idx[i] = i;
    cls = t.add(cls, t.gather_rows(t.leaf(*chunk_pos_), pos_idx));
    Var z = a2_stack_.forward(t, cls, train, dropout_rng);
    return t.maxpool_rows(z);  // {dim}
}

Tensor BiEncoder::encode_query_eval(const std::vector<std::size_t>& tokens) const {
    Tape t;
    Rng unused(0);
    return encode_query(t, tokens, false, unused).val();
}

Tensor BiEncoder::encode_article_eval(const std::vector<std::size_t>& tokens) const {
    Tape t;
    Rng unused(0);
    return encode_article(t, tokens, false, unused).val();
}

std::vector<Parameter*> BiEncoder::query_params(ParamStore& store) const {
    return store.with_prefix("q_enc.");
}

std::vector<Parameter*> BiEncoder::article_params(ParamStore& store) const {
    std::vector<Parameter*> out = store.with_prefix("a_enc.");
    for (Parameter* p : store.with_prefix("a_enc2.")) out.push_back(p);
    return out;
}

ArticleMatrix build_article_index(const BiEncoder& encoder, const Corpus& corpus) {
    ArticleMatrix index;
    std::size_t d = encoder.config().dim;
    index.vectors = Tensor::zeros({corpus.size(), d});
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        Tensor v = encoder.encode_article_eval(corpus.articles[i].tokens);
        for (std::size_t j = 0; j < d; ++j) index.vectors.at(i, j) = v.values[j];
    }
    return index;
}

std::vector<DenseHit> dense_topk(const ArticleMatrix& index, const Tensor& query_vec,
                                 std::size_t k) {
    if (k < 1) throw ConfigError("dense search: k must be >= 1");
    std::size_t n = index.vectors.rows();
    std::size_t d = index.vectors.cols();
    if (query_vec.numel() != d) {
        throw ShapeError("dense search: query dim " + std::to_string(query_vec.numel()) +
                         " vs index dim " + std::to_string(d));
    }
    std::vector<DenseHit> hits(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += index.vectors.values[i * d + j] * query_vec.values[j];
        hits[i] = DenseHit{i, s};
    }
    std::sort(hits.begin(), hits.end(), [](const DenseHit& a, const DenseHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.article < b.article;
    });
    if (hits.size() > k) hits.resize(k);
    return hits;
}

}  // namespace statret
