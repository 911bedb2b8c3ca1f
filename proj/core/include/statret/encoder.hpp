#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "statret/corpus.hpp"
#include "statret/params.hpp"
#include "statret/rng.hpp"
#include "statret/tape.hpp"

namespace statret {

struct EncoderConfig {
    std::size_t dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ff_dim = 256;
    double dropout = 0.1;
    std::size_t chunk_len = 64;
    std::size_t max_chunks = 8;
    bool hierarchical = true;  // false: single-sequence article encoder

    void validate() const;  // throws ConfigError
};

/// Weights of one transformer encoder stack (pre-embedded input rows in,
/// same-shape rows out). Post-layer-norm residual blocks with GeLU
/// feed-forward, as in the standard encoder recipe.
class TransformerStack {
public:
    TransformerStack() = default;
    TransformerStack(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                     Rng& init);

    /// x is {n, dim}; returns {n, dim}. Dropout is applied after the
    /// attention projection and after the feed-forward when train is set.
    Var forward(Tape& t, Var x, bool train, Rng& dropout_rng) const;

private:
    struct Layer {
        Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
        Parameter *ln1_g, *ln1_b;
        Parameter *w1, *b1, *w2, *b2;
        Parameter *ln2_g, *ln2_b;
    };
    std::vector<Layer> layers_;
    std::size_t dim_ = 0, heads_ = 0;
    double dropout_ = 0.0;
};

/// Dense two-tower model: a query encoder with CLS readout and an article
/// encoder that runs each chunk through a shared chunk encoder, adds
/// learnable chunk-position encodings, passes the chunk vectors through a
/// second-level transformer, and max-pools the rows. The token embedding
/// table is shared between the towers; transformer weights are separate.
class BiEncoder {
public:
    BiEncoder(ParamStore& store, EncoderConfig cfg, std::size_t vocab_size, Rng& init);

    Var encode_query(Tape& t, const std::vector<std::size_t>& tokens, bool train,
                     Rng& dropout_rng) const;
    Var encode_article(Tape& t, const std::vector<std::size_t>& tokens, bool train,
                       Rng& dropout_rng) const;

    /// Eval-mode encodings on a private tape: deterministic, dropout off.
    Tensor encode_query_eval(const std::vector<std::size_t>& tokens) const;
    Tensor encode_article_eval(const std::vector<std::size_t>& tokens) const;

    const EncoderConfig& config() const { return cfg_; }
    std::size_t vocab_size() const { return vocab_size_; }

    /// Sequences longer than the encoder can accept are truncated; this
    /// counts how many times that happened.
    std::size_t truncation_count() const { return truncations_; }

    Parameter& token_embedding() const { return *tok_emb_; }
    /// Query-tower parameters (token table excluded).
    std::vector<Parameter*> query_params(ParamStore& store) const;
    /// Article-tower parameters (token table excluded).
    std::vector<Parameter*> article_params(ParamStore& store) const;

private:
    EncoderConfig cfg_;
    std::size_t vocab_size_ = 0;
    Parameter* tok_emb_ = nullptr;
    Parameter* q_pos_ = nullptr;
    Parameter* a_pos_ = nullptr;
    Parameter* chunk_pos_ = nullptr;
    TransformerStack q_stack_, a_stack_, a2_stack_;
    mutable std::size_t truncations_ = 0;

    Var embed(Tape& t, const std::vector<std::size_t>& ids, Parameter* pos) const;
    Var encode_sequence(Tape& t, const TransformerStack& stack,
                        const std::vector<std::size_t>& tokens, Parameter* pos, bool train,
                        Rng& dropout_rng) const;
};

/// Dense retrieval index: one row per article, in corpus order.
struct ArticleMatrix {
    Tensor vectors;  // {num_articles, dim}
};

ArticleMatrix build_article_index(const BiEncoder& encoder, const Corpus& corpus);

/// Exhaustive dot-product search; descending score, ties broken by
/// ascending article position, zeros not excluded (scores may be negative).
struct DenseHit {
    std::size_t article = 0;
    double score = 0.0;
};
std::vector<DenseHit> dense_topk(const ArticleMatrix& index, const Tensor& query_vec,
                                 std::size_t k);

}  // namespace statret
