#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "statret/corpus.hpp"
#include "statret/errors.hpp"
#include "statret/metrics.hpp"
#include "statret/rng.hpp"

using namespace statret;

namespace {

using Set = std::unordered_set<std::size_t>;

// Definition-level re-implementations used as the oracle: scan the ranking
// directly, no shared helpers with the library code.
double oracle_recall(const std::vector<std::size_t>& ranked, const Set& rel, std::size_t k) {
    double hits = 0;
    for (std::size_t i = 0; i < ranked.size() && i < k; ++i) {
        hits += rel.count(ranked[i]) ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(rel.size());
}

double oracle_ap(const std::vector<std::size_t>& ranked, const Set& rel) {
    double sum = 0;
    double seen = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (rel.count(ranked[i])) {
            seen += 1.0;
            sum += seen / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(rel.size());
}

double oracle_rprec(const std::vector<std::size_t>& ranked, const Set& rel) {
    double hits = 0;
    for (std::size_t i = 0; i < ranked.size() && i < rel.size(); ++i) {
        hits += rel.count(ranked[i]) ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(rel.size());
}

}  // namespace

TEST_CASE("hand-enumerated metric values") {
    // ranking [a, x, b] with relevant {a, b}; ids mapped to 0=a, 1=x, 2=b
    std::vector<std::size_t> ranked = {0, 1, 2};
    Set rel = {0, 2};
    CHECK(recall_at_k(ranked, rel, 2) == doctest::Approx(0.5));
    CHECK(average_precision(ranked, rel) == doctest::Approx(5.0 / 6.0));
    CHECK(r_precision(ranked, rel) == doctest::Approx(0.5));
}

TEST_CASE("boundary behaviours") {
    Set rel = {1, 3};
    CHECK(recall_at_k({0, 2, 4}, rel, 3) == 0.0);           // nothing relevant in top-k
    CHECK(recall_at_k({1, 3, 0, 2}, rel, 10) == 1.0);       // k beyond corpus
    CHECK(average_precision({1, 3}, rel) == 1.0);           // perfect ranking
    CHECK(average_precision({0, 2}, rel) == 0.0);           // relevant never ranked
    CHECK(average_precision({0, 0 + 4, 1}, rel) == doctest::Approx(1.0 / 6.0));  // single at rank 3
    CHECK(r_precision({1, 3}, rel) == 1.0);
    CHECK(r_precision({1}, Set{1}) == 1.0);                 // R = 1 at rank 1
    CHECK_THROWS_AS(recall_at_k({0}, rel, 0), ConfigError);
    CHECK_THROWS_AS(recall_at_k({0}, Set{}, 1), ValidationError);
}

TEST_CASE("metrics match the brute-force oracle on random instances") {
    Rng rng(404);
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n = 2 + rng.below(40);
        std::vector<std::size_t> ranked(n);
        std::iota(ranked.begin(), ranked.end(), 0);
        rng.shuffle(ranked);
        // truncate some rankings to exercise the unranked-relevant rule
        if (rng.uniform01() < 0.3) ranked.resize(1 + rng.below(n));

        Set rel;
        std::size_t r = 1 + rng.below(std::min<std::size_t>(n, 6));
        while (rel.size() < r) rel.insert(rng.below(n));
        std::size_t k = 1 + rng.below(n + 3);

        CHECK(recall_at_k(ranked, rel, k) == oracle_recall(ranked, rel, k));
        CHECK(average_precision(ranked, rel) == doctest::Approx(oracle_ap(ranked, rel)).epsilon(1e-14));
        CHECK(r_precision(ranked, rel) == oracle_rprec(ranked, rel));
    }
}

TEST_CASE("recall is monotone in k") {
    Rng rng(405);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 5 + rng.below(30);
        std::vector<std::size_t> ranked(n);
        std::iota(ranked.begin(), ranked.end(), 0);
        rng.shuffle(ranked);
        Set rel;
        while (rel.size() < 3) rel.insert(rng.below(n));
        double prev = 0.0;
        for (std::size_t k = 1; k <= n; ++k) {
            double cur = recall_at_k(ranked, rel, k);
            CHECK(cur >= prev);
            prev = cur;
        }
        CHECK(prev == 1.0);
    }
}

TEST_CASE("ap and r-precision hit 1 exactly when relevant fill the top ranks") {
    Rng rng(406);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 6 + rng.below(20);
        std::size_t r = 2 + rng.below(4);
        std::vector<std::size_t> ranked(n);
        std::iota(ranked.begin(), ranked.end(), 0);
        rng.shuffle(ranked);
        Set rel;
        bool top = rng.uniform01() < 0.5;
        if (top) {
            for (std::size_t i = 0; i < r; ++i) rel.insert(ranked[i]);
        } else {
            // at least one relevant outside the top-R window
            for (std::size_t i = 0; i + 1 < r; ++i) rel.insert(ranked[i]);
            rel.insert(ranked[r]);
        }
        bool ap_one = average_precision(ranked, rel) == 1.0;
        bool rp_one = r_precision(ranked, rel) == 1.0;
        CHECK(ap_one == top);
        CHECK(rp_one == top);
        CHECK(ap_one == rp_one);
    }
}

TEST_CASE("random-permutation recall matches the hypergeometric expectation") {
    // |P| = 30, R = 5, k = 10: expectation min(k,|P|)/|P| = 1/3
    const std::size_t n = 30, r = 5, k = 10;
    Set rel;
    for (std::size_t i = 0; i < r; ++i) rel.insert(i);

    double sum = 0.0, sumsq = 0.0;
    const int seeds = 200;
    for (int s = 0; s < seeds; ++s) {
        Rng rng(1000 + s);
        std::vector<std::size_t> ranked(n);
        std::iota(ranked.begin(), ranked.end(), 0);
        rng.shuffle(ranked);
        double v = recall_at_k(ranked, rel, k);
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / seeds;
    double var = sumsq / seeds - mean * mean;
    double se = std::sqrt(var / seeds);
    double expected = static_cast<double>(std::min(k, n)) / static_cast<double>(n);
    CHECK(std::fabs(mean - expected) < 3.0 * se);
}

namespace {

Corpus eval_fixture(std::vector<Query>& queries) {
    std::vector<Article> articles;
    for (int i = 0; i < 10; ++i) {
        articles.push_back({"a" + std::to_string(i), "token" + std::to_string(i), {}, {}});
    }
    queries.push_back({"q0", "token1", {"a1", "a4"}, {}});
    queries.push_back({"q1", "token2", {"a2"}, {}});
    return assemble_corpus(std::move(articles), {&queries});
}

}  // namespace

TEST_CASE("evaluate aggregates per-query metrics") {
    std::vector<Query> queries;
    Corpus corpus = eval_fixture(queries);

    // oracle retriever: relevant articles first, rest ascending
    RankerFn oracle = [&](const Query& q) {
        std::vector<std::size_t> rel, rest;
        std::unordered_set<std::size_t> rel_set;
        for (const std::string& rid : q.relevant_ids) rel_set.insert(corpus.article_index(rid));
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            (rel_set.count(i) ? rel : rest).push_back(i);
        }
        rel.insert(rel.end(), rest.begin(), rest.end());
        return rel;
    };
    EvalReport report = evaluate("bm25", corpus, queries, {1, 2, 5}, oracle);
    CHECK(report.mean_recall[1] == 1.0);  // R@2: both queries fully covered
    CHECK(report.map == 1.0);
    CHECK(report.mrp == 1.0);
    REQUIRE(report.per_query.size() == 2);
    CHECK(report.per_query[0].recall[0] == doctest::Approx(0.5));  // R@1 of a 2-relevant query

    // reversed oracle: relevant articles last
    RankerFn reversed = [&](const Query& q) {
        std::vector<std::size_t> ranked = oracle(q);
        std::reverse(ranked.begin(), ranked.end());
        return ranked;
    };
    EvalReport worst = evaluate("be", corpus, queries, {1, 2, 5}, reversed);
    // q0: relevant at ranks 9, 10 -> AP = (1/9 + 2/10)/2; q1: rank 10 -> 1/10
    double expect_map = ((1.0 / 9.0 + 2.0 / 10.0) / 2.0 + 1.0 / 10.0) / 2.0;
    CHECK(worst.map == doctest::Approx(expect_map).epsilon(1e-12));
    CHECK(worst.mean_recall[0] == 0.0);
    CHECK(worst.mrp == 0.0);
}

TEST_CASE("unknown configuration is rejected with the valid list") {
    std::vector<Query> queries;
    Corpus corpus = eval_fixture(queries);
    RankerFn trivial = [&](const Query&) {
        std::vector<std::size_t> r(corpus.size());
        std::iota(r.begin(), r.end(), 0);
        return r;
    };
    try {
        evaluate("made-up", corpus, queries, {5}, trivial);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("made-up") != std::string::npos);
        CHECK(msg.find("qabisar") != std::string::npos);
        CHECK(msg.find("bm25") != std::string::npos);
    }
}

TEST_CASE("duplicate ids in a ranking are rejected") {
    std::vector<Query> queries;
    Corpus corpus = eval_fixture(queries);
    RankerFn dup = [&](const Query&) { return std::vector<std::size_t>{0, 1, 0}; };
    CHECK_THROWS_AS(evaluate("bm25", corpus, queries, {2}, dup), ValidationError);
}

TEST_CASE("comparison table marks the best value per column, ties on both") {
    EvalReport a, b;
    a.config = "bm25";
    a.k_list = {5, 10};
    a.split_ids = {"q0", "q1"};
    a.mean_recall = {0.4, 0.6};
    a.map = 0.5;
    a.mrp = 0.3;
    b = a;
    b.config = "qabisar";
    b.mean_recall = {0.7, 0.6};
    b.map = 0.45;
    b.mrp = 0.35;

    std::string table = comparison_table({a, b});
    CHECK(table.find("bm25") != std::string::npos);
    CHECK(table.find("qabisar") != std::string::npos);
    CHECK(table.find("R@5") != std::string::npos);
    CHECK(table.find("0.7000*") != std::string::npos);   // qabisar best R@5
    CHECK(table.find("0.5000*") != std::string::npos);   // bm25 best MAP
    // R@10 tie marked on both rows
    CHECK(std::count(table.begin(), table.end(), '*') == 5);

    std::string again = comparison_table({a, b});
    CHECK(table == again);  // stable formatting

    EvalReport c = b;
    c.split_ids = {"q0", "q2"};
    CHECK_THROWS_AS(comparison_table({a, c}), ValidationError);
    EvalReport d = b;
    d.k_list = {5, 20};
    CHECK_THROWS_AS(comparison_table({a, d}), ValidationError);
}

TEST_CASE("report files are written as line records and reject NaN") {
    namespace fs = std::filesystem;
    EvalReport r;
    r.config = "bm25";
    r.k_list = {5};
    r.split_ids = {"q0"};
    r.mean_recall = {0.25};
    r.map = 0.5;
    r.mrp = 0.25;
    QueryEval qe;
    qe.query_id = "q0";
    qe.recall = {0.25};
    qe.ap = 0.5;
    qe.rprec = 0.25;
    r.per_query.push_back(qe);

    fs::path path = fs::temp_directory_path() / "statret_report.jsonl";
    write_report_jsonl(path.string(), r);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        CHECK(line.find("\"config\":\"bm25\"") != std::string::npos);
    }
    CHECK(lines == 3);  // one recall line + map + rprec

    EvalReport bad = r;
    bad.map = std::nan("");
    CHECK_THROWS_AS(write_report_jsonl(path.string(), bad), NumericError);
}
