#include "statret/stage1.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "statret/errors.hpp"
#include "statret/metrics.hpp"
#include "statret/optim.hpp"
#include "statret/tape.hpp"

namespace statret {

void Stage1Config::validate() const {
    if (epochs < 1) throw ConfigError("stage 1: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("stage 1: batch size must be >= 1");
    if (peak_lr <= 0.0) throw ConfigError("stage 1: peak learning rate must be positive");
    if (clip_norm <= 0.0) throw ConfigError("stage 1: clip norm must be positive");
    if (selection_k < 1) throw ConfigError("stage 1: selection k must be >= 1");
    if (contrastive.tau <= 0.0) throw ConfigError("stage 1: temperature must be positive");
    if (contrastive.max_positives < 1) throw ConfigError("stage 1: need at least one positive");
}

void write_curve_jsonl(const std::string& path, const std::vector<CurvePoint>& curve) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (const CurvePoint& p : curve) {
        nlohmann::json j;
        j["step"] = p.step;
        j["epoch"] = p.epoch;
        j["loss"] = p.loss;
        j["lr"] = p.lr;
        out << j.dump() << "\n";
    }
}

double dense_mean_recall(const BiEncoder& encoder, const Corpus& corpus,
                         const std::vector<Query>& queries, std::size_t k) {
    if (queries.empty()) throw ValidationError("recall over an empty query set");
    ArticleMatrix index = build_article_index(encoder, corpus);
    double sum = 0.0;
    for (const Query& q : queries) {
        Tensor vec = encoder.encode_query_eval(q.tokens);
        std::vector<DenseHit> hits = dense_topk(index, vec, corpus.size());
        std::vector<std::size_t> ranked;
        ranked.reserve(hits.size());
        for (const DenseHit& h : hits) ranked.push_back(h.article);
        std::unordered_set<std::size_t> rel;
        for (const std::string& rid : q.relevant_ids) rel.insert(corpus.article_index(rid));
        sum += recall_at_k(ranked, rel, k);
    }
    return sum / static_cast<double>(queries.size());
}

Stage1Result stage1_train(ParamStore& store, BiEncoder& encoder, const Corpus& corpus,
                          const DatasetSplit& split, const InvertedIndex& index,
                          const Stage1Config& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::vector<Query>& train = split.train;
    if (train.empty()) throw ValidationError("stage 1: empty training split");

    std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;

    AdamWConfig ocfg;
    ocfg.peak_lr = cfg.peak_lr;
    ocfg.total_steps = cfg.epochs * steps_per_epoch;
    AdamW opt(store.all(), ocfg);

    Rng master(seed);
    Rng shuffle_rng = master.fork(1);
    Rng batch_rng = master.fork(2);
    Rng dropout_rng = master.fork(3);

    Stage1Result result;
    std::vector<Tensor> best_weights;
    bool has_val = !split.validation.empty();

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::size_t> batch_queries(order.begin() + start, order.begin() + end);

            opt.zero_grad();
            Tape t;
            ContrastiveBatch batch = build_contrastive_batch(corpus, train, batch_queries, index,
                                                             cfg.contrastive, batch_rng, seed);
            Var scores = batch_scores(t, encoder, corpus, train, batch, cfg.contrastive,
                                      /*train=*/true, dropout_rng);
            Var loss = contrastive_loss(t, scores, batch);
            double loss_val = t.value(loss)[0];
            std::size_t step = opt.step_count() + 1;
            if (!std::isfinite(loss_val)) {
                throw NumericError("stage 1: non-finite loss at step " + std::to_string(step));
            }
            t.backward(loss);
            opt.clip_global_norm(cfg.clip_norm);
            opt.step();

            result.curve.push_back({step, epoch, loss_val, opt.current_lr()});
            epoch_loss += loss_val;
        }
        result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(steps_per_epoch));

        if (has_val) {
            double recall = dense_mean_recall(encoder, corpus, split.validation, cfg.selection_k);
            result.val_recall.push_back(recall);
            if (recall > result.best_val_recall) {
                result.best_val_recall = recall;
                result.best_epoch = epoch;
                best_weights.clear();
                for (std::size_t i = 0; i < store.size(); ++i) {
                    best_weights.push_back(store.at(i).value);
                }
            }
        }
    }

    if (has_val) {
        for (std::size_t i = 0; i < store.size(); ++i) {
            store.at(i).value = best_weights[i];
            store.at(i).zero_grad();
        }
    } else {
        result.best_epoch = cfg.epochs;
    }
    return result;
}

}  // namespace statret
