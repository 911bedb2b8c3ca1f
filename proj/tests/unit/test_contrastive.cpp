#include <doctest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "finite_diff.hpp"
#include "statret/bm25.hpp"
#include "statret/contrastive.hpp"
#include "statret/corpus.hpp"
#include "statret/encoder.hpp"
#include "statret/errors.hpp"
#include "statret/rng.hpp"

using namespace statret;

namespace {

// Small corpus + queries with known relevance for batch-construction tests.
struct Fixture {
    Corpus corpus;
    std::vector<Query> queries;
    InvertedIndex index;

    explicit Fixture(std::size_t n_articles = 10) {
        std::vector<Article> articles;
        Rng rng(5);
        for (std::size_t i = 0; i < n_articles; ++i) {
            std::string text;
            for (int k = 0; k < 6; ++k) {
                if (k) text += ' ';
                text += "w" + std::to_string(rng.below(12));
            }
            articles.push_back({"a" + std::to_string(i), text, {}, {}});
        }
        queries.push_back({"q0", "w1 w2", {"a0", "a1", "a2"}, {}});
        queries.push_back({"q1", "w3 w4", {"a3"}, {}});
        queries.push_back({"q2", "w5 w6", {"a4", "a5"}, {}});
        corpus = assemble_corpus(std::move(articles), {&queries});
        index = build_index(corpus);
    }
};

// Direct per-pair evaluation of the loss from the score matrix, bypassing
// the tape: mean over pairs of log(sum exp(candidates)) - positive.
double brute_loss(const Tensor& scores, const ContrastiveBatch& batch) {
    std::size_t cols = scores.cols();
    double total = 0.0;
    for (const auto& pair : batch.pairs) {
        double mx = -1e300;
        for (std::size_t slot : pair.candidate_slots) {
            mx = std::max(mx, scores.values[pair.query_row * cols + slot]);
        }
        double sum = 0.0;
        for (std::size_t slot : pair.candidate_slots) {
            sum += std::exp(scores.values[pair.query_row * cols + slot] - mx);
        }
        double lse = mx + std::log(sum);
        total += lse - scores.values[pair.query_row * cols + pair.positive_slot];
    }
    return total / static_cast<double>(batch.pairs.size());
}

}  // namespace

TEST_CASE("batch construction respects positive caps and exclusion rules") {
    Fixture f;
    ContrastiveConfig cfg;
    Rng rng(1);
    ContrastiveBatch batch =
        build_contrastive_batch(f.corpus, f.queries, {0, 1, 2}, f.index, cfg, rng, 7);

    REQUIRE(batch.queries.size() == 3);
    CHECK(batch.queries[0].positives.size() == 2);  // q0 has 3 relevant, capped at 2
    CHECK(batch.queries[1].positives.size() == 1);
    CHECK(batch.queries[2].positives.size() == 2);
    for (const BatchQuery& bq : batch.queries) {
        CHECK(bq.negatives.size() == cfg.num_negatives);
    }
    CHECK(batch.pairs.size() == 5);

    // no candidate of a pair may be relevant to its query (except the
    // positive itself)
    for (const auto& pair : batch.pairs) {
        const Query& q = f.queries[batch.queries[pair.query_row].query];
        CHECK(pair.candidate_slots[0] == pair.positive_slot);
        for (std::size_t i = 1; i < pair.candidate_slots.size(); ++i) {
            std::size_t article = batch.articles[pair.candidate_slots[i]];
            const std::string& id = f.corpus.articles[article].id;
            bool relevant = false;
            for (const std::string& rid : q.relevant_ids) relevant |= (rid == id);
            CHECK_FALSE(relevant);
        }
        // candidates are unique slots
        std::set<std::size_t> uniq(pair.candidate_slots.begin(), pair.candidate_slots.end());
        CHECK(uniq.size() == pair.candidate_slots.size());
    }
}

TEST_CASE("a second positive of the same query never enters the first pair's denominator") {
    Fixture f;
    ContrastiveConfig cfg;
    Rng rng(1);
    ContrastiveBatch batch =
        build_contrastive_batch(f.corpus, f.queries, {0, 1}, f.index, cfg, rng, 7);

    // q0 contributes two pairs; each pair's candidates exclude the other
    // positive because both are relevant to q0
    REQUIRE(batch.queries[0].positives.size() == 2);
    std::size_t p0 = batch.queries[0].positives[0];
    std::size_t p1 = batch.queries[0].positives[1];
    for (const auto& pair : batch.pairs) {
        if (pair.query_row != 0) continue;
        std::size_t other = (pair.positive_slot == p0) ? p1 : p0;
        for (std::size_t slot : pair.candidate_slots) CHECK(slot != other);
    }
}

TEST_CASE("candidate pools shrink when other queries' negatives are excluded") {
    Fixture f;
    ContrastiveConfig with, without;
    without.include_other_negatives = false;
    Rng rng1(1), rng2(1);
    ContrastiveBatch a =
        build_contrastive_batch(f.corpus, f.queries, {0, 1, 2}, f.index, with, rng1, 7);
    ContrastiveBatch b =
        build_contrastive_batch(f.corpus, f.queries, {0, 1, 2}, f.index, without, rng2, 7);
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(b.pairs[i].candidate_slots.size() <= a.pairs[i].candidate_slots.size());
    }
}

TEST_CASE("mined negatives are deterministic per seed and query") {
    Fixture f;
    ContrastiveConfig cfg;
    Rng rng1(1), rng2(1);
    ContrastiveBatch a =
        build_contrastive_batch(f.corpus, f.queries, {0, 1}, f.index, cfg, rng1, 7);
    ContrastiveBatch b =
        build_contrastive_batch(f.corpus, f.queries, {0, 1}, f.index, cfg, rng2, 7);
    REQUIRE(a.queries.size() == b.queries.size());
    for (std::size_t i = 0; i < a.queries.size(); ++i) {
        CHECK(a.queries[i].negatives == b.queries[i].negatives);
        CHECK(a.queries[i].positives == b.queries[i].positives);
    }
}

TEST_CASE("uniform scores give ln of the candidate count") {
    Fixture f;
    ContrastiveConfig cfg;
    Rng rng(1);
    ContrastiveBatch batch =
        build_contrastive_batch(f.corpus, f.queries, {0, 1, 2}, f.index, cfg, rng, 7);

    Tape t;
    Tensor uniform = Tensor::full({batch.queries.size(), batch.articles.size()}, 0.37);
    Var loss = contrastive_loss(t, t.constant(uniform), batch);

    double expected = 0.0;
    for (const auto& pair : batch.pairs) {
        expected += std::log(static_cast<double>(pair.candidate_slots.size()));
    }
    expected /= static_cast<double>(batch.pairs.size());
    CHECK(loss.val().values[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("hand-computed two-candidate loss") {
    // one query, one positive, one negative; scores 1 and 0 give
    // -ln(e / (e + 1)) = ln(1 + exp(-1))
    ContrastiveBatch batch;
    batch.articles = {0, 1};
    BatchQuery bq;
    bq.query = 0;
    bq.positives = {0};
    bq.negatives = {1};
    batch.queries.push_back(bq);
    ContrastiveBatch::Pair pair;
    pair.query_row = 0;
    pair.positive_slot = 0;
    pair.candidate_slots = {0, 1};
    batch.pairs.push_back(pair);

    Tape t;
    Tensor scores = Tensor::matrix(1, 2, {1.0, 0.0});
    Var loss = contrastive_loss(t, t.constant(scores), batch);
    CHECK(loss.val().values[0] == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
    CHECK(loss.val().values[0] == doctest::Approx(0.31326168752).epsilon(1e-9));
}

TEST_CASE("raising the positive score strictly lowers the loss") {
    ContrastiveBatch batch;
    batch.articles = {0, 1, 2};
    BatchQuery bq;
    bq.query = 0;
    bq.positives = {0};
    bq.negatives = {1, 2};
    batch.queries.push_back(bq);
    ContrastiveBatch::Pair pair;
    pair.query_row = 0;
    pair.positive_slot = 0;
    pair.candidate_slots = {0, 1, 2};
    batch.pairs.push_back(pair);

    double prev = 1e300;
    for (double s : {-1.0, 0.0, 1.0, 3.0, 10.0, 40.0}) {
        Tape t;
        Tensor scores = Tensor::matrix(1, 3, {s, 0.4, -0.2});
        double loss = contrastive_loss(t, t.constant(scores), batch).val().values[0];
        CHECK(loss >= 0.0);
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-10);  // positive score >> negatives drives the loss to zero
}

TEST_CASE("tape loss equals direct evaluation on random batches") {
    Fixture f(12);
    ContrastiveConfig cfg;
    Rng rng(3);
    ContrastiveBatch batch =
        build_contrastive_batch(f.corpus, f.queries, {0, 1, 2}, f.index, cfg, rng, 11);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor scores = Tensor::randn({batch.queries.size(), batch.articles.size()}, rng, 2.0);
        Tape t;
        double got = contrastive_loss(t, t.constant(scores), batch).val().values[0];
        CHECK(got == doctest::Approx(brute_loss(scores, batch)).epsilon(1e-12));
    }
}

TEST_CASE("pairs without negatives are rejected") {
    ContrastiveBatch batch;
    batch.articles = {0};
    BatchQuery bq;
    bq.query = 0;
    bq.positives = {0};
    batch.queries.push_back(bq);
    ContrastiveBatch::Pair pair;
    pair.query_row = 0;
    pair.positive_slot = 0;
    pair.candidate_slots = {0};  // no negatives
    batch.pairs.push_back(pair);

    Tape t;
    Tensor scores = Tensor::matrix(1, 1, {1.0});
    Var s = t.constant(scores);
    CHECK_THROWS_AS(contrastive_loss(t, s, batch), ValidationError);
}

TEST_CASE("very large temperature flattens the softmax toward ln |C|") {
    Fixture f;
    ContrastiveConfig cfg;
    cfg.tau = 1e6;
    Rng rng(1);
    ContrastiveBatch batch =
        build_contrastive_batch(f.corpus, f.queries, {0, 1, 2}, f.index, cfg, rng, 7);

    ParamStore store;
    EncoderConfig ecfg;
    ecfg.dim = 8;
    ecfg.layers = 1;
    ecfg.heads = 2;
    ecfg.ff_dim = 16;
    ecfg.dropout = 0.0;
    ecfg.chunk_len = 8;
    ecfg.max_chunks = 2;
    Rng init(21);
    BiEncoder enc(store, ecfg, f.corpus.vocab.size(), init);

    Tape t;
    Rng dr(0);
    Var scores = batch_scores(t, enc, f.corpus, f.queries, batch, cfg, false, dr);
    double loss = contrastive_loss(t, scores, batch).val().values[0];

    double flat = 0.0;
    for (const auto& pair : batch.pairs) {
        flat += std::log(static_cast<double>(pair.candidate_slots.size()));
    }
    flat /= static_cast<double>(batch.pairs.size());
    CHECK(loss == doctest::Approx(flat).epsilon(1e-6));
}

TEST_CASE("loss gradients through both encoders match finite differences") {
    Fixture f(8);
    ContrastiveConfig cfg;
    cfg.num_negatives = 2;
    Rng rng(2);
    ContrastiveBatch batch =
        build_contrastive_batch(f.corpus, f.queries, {0, 1}, f.index, cfg, rng, 5);

    ParamStore store;
    EncoderConfig ecfg;
    ecfg.dim = 8;
    ecfg.layers = 1;
    ecfg.heads = 2;
    ecfg.ff_dim = 16;
    ecfg.dropout = 0.0;
    ecfg.chunk_len = 4;
    ecfg.max_chunks = 3;
    Rng init(22);
    BiEncoder enc(store, ecfg, f.corpus.vocab.size(), init);

    auto loss_value = [&]() {
        Tape t;
        Rng dr(0);
        Var scores = batch_scores(t, enc, f.corpus, f.queries, batch, cfg, false, dr);
        return contrastive_loss(t, scores, batch).val().values[0];
    };

    for (Parameter* p : store.all()) p->zero_grad();
    {
        Tape t;
        Rng dr(0);
        Var scores = batch_scores(t, enc, f.corpus, f.queries, batch, cfg, false, dr);
        t.backward(contrastive_loss(t, scores, batch));
    }
    Rng pick(55);
    double worst = statret::testing::max_grad_violation(store.all(), loss_value, pick, 3);
    CHECK(worst < 1.0);
}
