#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "statret/bm25.hpp"
#include "statret/encoder.hpp"
#include "statret/errors.hpp"
#include "statret/stage1.hpp"
#include "statret/synthetic.hpp"

using namespace statret;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.topics = 2;
    spec.articles_per_topic = 10;
    spec.section_size = 5;
    spec.sections_per_chapter = 2;
    spec.train_queries = 12;
    spec.val_queries = 4;
    spec.test_queries = 4;
    spec.relevant_max = 3;
    spec.topic_common_tokens = 12;
    spec.section_doc_tokens = 5;
    spec.section_query_tokens = 5;
    spec.noise_tokens = 20;
    spec.article_len = 24;
    spec.article_len_jitter = 4;
    spec.query_len = 8;
    return spec;
}

EncoderConfig small_encoder() {
    EncoderConfig cfg;
    cfg.dim = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ff_dim = 32;
    cfg.chunk_len = 16;
    cfg.max_chunks = 2;
    return cfg;
}

struct Trained {
    LoadedDataset data;
    ParamStore store;
    BiEncoder encoder;
    Stage1Result result;

    Trained(const Stage1Config& cfg, std::uint64_t seed, bool keep_val = true)
        : data(generate_synthetic(small_spec(), 11)),
          encoder([&]() -> BiEncoder {
              Rng init(1);
              return BiEncoder(store, small_encoder(), data.corpus.vocab.size(), init);
          }()) {
        if (!keep_val) data.split.validation.clear();
        InvertedIndex index(data.corpus, {});
        result = stage1_train(store, encoder, data.corpus, data.split, index, cfg, seed);
    }
};

Stage1Config fast_config() {
    Stage1Config cfg;
    cfg.epochs = 2;
    cfg.batch_size = 6;
    return cfg;
}

}  // namespace

TEST_CASE("configuration bounds are enforced") {
    Stage1Config cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.peak_lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.clip_norm = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.contrastive.tau = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_NOTHROW(Stage1Config{}.validate());
}

TEST_CASE("two epochs on the default corpus reduce the mean loss") {
    LoadedDataset data = generate_synthetic(SyntheticSpec{}, 11);
    ParamStore store;
    Rng init(5);
    BiEncoder encoder(store, EncoderConfig{}, data.corpus.vocab.size(), init);
    InvertedIndex index(data.corpus, {});
    Stage1Config cfg;
    cfg.epochs = 2;
    Stage1Result result = stage1_train(store, encoder, data.corpus, data.split, index, cfg, 5);

    REQUIRE(result.epoch_mean_loss.size() == 2);
    CHECK(result.epoch_mean_loss[1] < result.epoch_mean_loss[0]);
    // curve covers every step; the scheduled rate only reaches zero at the end
    CHECK(result.curve.size() == 10);  // 100 queries / batch 24 -> 5 steps x 2 epochs
    for (std::size_t i = 0; i < result.curve.size(); ++i) {
        CHECK(result.curve[i].step == i + 1);
        if (i + 1 < result.curve.size()) CHECK(result.curve[i].lr > 0.0);
        CHECK(result.curve[i].lr >= 0.0);
        CHECK(std::isfinite(result.curve[i].loss));
    }
    CHECK(result.curve.front().epoch == 1);
    CHECK(result.curve.back().epoch == 2);
}

TEST_CASE("identical seeds give identical curves and weights") {
    Trained a(fast_config(), 9);
    Trained b(fast_config(), 9);
    REQUIRE(a.result.curve.size() == b.result.curve.size());
    for (std::size_t i = 0; i < a.result.curve.size(); ++i) {
        CHECK(a.result.curve[i].loss == b.result.curve[i].loss);
        CHECK(a.result.curve[i].lr == b.result.curve[i].lr);
    }
    REQUIRE(a.store.size() == b.store.size());
    for (std::size_t i = 0; i < a.store.size(); ++i) {
        const Tensor& ta = a.store.at(i).value;
        const Tensor& tb = b.store.at(i).value;
        REQUIRE(ta.numel() == tb.numel());
        for (std::size_t j = 0; j < ta.numel(); ++j) CHECK(ta[j] == tb[j]);
    }

    Trained c(fast_config(), 10);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.result.curve.size() && !any_diff; ++i) {
        any_diff = a.result.curve[i].loss != c.result.curve[i].loss;
    }
    CHECK(any_diff);
}

TEST_CASE("validation split drives best-epoch selection") {
    Stage1Config cfg = fast_config();
    cfg.epochs = 3;
    Trained run(cfg, 21);
    REQUIRE(run.result.val_recall.size() == 3);
    // recorded best is the max of the per-epoch values
    double best = -1.0;
    std::size_t best_epoch = 0;
    for (std::size_t e = 0; e < run.result.val_recall.size(); ++e) {
        if (run.result.val_recall[e] > best) {
            best = run.result.val_recall[e];
            best_epoch = e + 1;
        }
    }
    CHECK(run.result.best_epoch == best_epoch);
    CHECK(run.result.best_val_recall == best);
    // restored weights reproduce the recorded validation recall exactly
    double again = dense_mean_recall(run.encoder, run.data.corpus, run.data.split.validation,
                                     cfg.selection_k);
    CHECK(again == run.result.best_val_recall);
}

TEST_CASE("without validation the final weights stand") {
    Trained run(fast_config(), 3, /*keep_val=*/false);
    CHECK(run.result.val_recall.empty());
    CHECK(run.result.best_epoch == 2);
    CHECK(run.result.best_val_recall == -1.0);
}

TEST_CASE("a poisoned parameter aborts with the step number") {
    LoadedDataset data = generate_synthetic(small_spec(), 11);
    ParamStore store;
    Rng init(1);
    BiEncoder encoder(store, small_encoder(), data.corpus.vocab.size(), init);
    store.at(0).value[0] = std::numeric_limits<double>::quiet_NaN();
    InvertedIndex index(data.corpus, {});
    try {
        stage1_train(store, encoder, data.corpus, data.split, index, fast_config(), 2);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
}

TEST_CASE("curve files are line-delimited records") {
    namespace fs = std::filesystem;
    std::vector<CurvePoint> curve = {{1, 1, 2.5, 0.001}, {2, 1, 2.25, 0.002}};
    fs::path path = fs::temp_directory_path() / "statret_curve.jsonl";
    write_curve_jsonl(path.string(), curve);
    std::ifstream in(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 2);
    CHECK(lines[0].find("\"step\":1") != std::string::npos);
    CHECK(lines[0].find("\"loss\":2.5") != std::string::npos);
    CHECK(lines[1].find("\"lr\":0.002") != std::string::npos);
}
