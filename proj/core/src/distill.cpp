#include "statret/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "statret/errors.hpp"
#include "statret/optim.hpp"

namespace statret {

KdMode parse_kd_mode(const std::string& name) {
    if (name == "score") return KdMode::Score;
    if (name == "feature") return KdMode::Feature;
    if (name == "both") return KdMode::Both;
    if (name == "none") return KdMode::None;
    throw ConfigError("unknown kd mode '" + name + "'; choices: score, feature, both, none");
}

KdSchedule parse_kd_schedule(const std::string& name) {
    if (name == "joint") return KdSchedule::Joint;
    if (name == "sequential") return KdSchedule::Sequential;
    throw ConfigError("unknown schedule '" + name + "'; choices: joint, sequential");
}

GraphChoice parse_graph_choice(const std::string& name) {
    if (name == "both") return GraphChoice::Both;
    if (name == "bipartite-only") return GraphChoice::BipartiteOnly;
    if (name == "statute-only") return GraphChoice::StatuteOnly;
    if (name == "none") return GraphChoice::None;
    throw ConfigError("unknown graph choice '" + name +
                      "'; choices: both, bipartite-only, statute-only, none");
}

const char* kd_mode_name(KdMode m) {
    switch (m) {
        case KdMode::Score: return "score";
        case KdMode::Feature: return "feature";
        case KdMode::Both: return "both";
        case KdMode::None: return "none";
    }
    return "?";
}

const char* kd_schedule_name(KdSchedule s) {
    return s == KdSchedule::Joint ? "joint" : "sequential";
}

const char* graph_choice_name(GraphChoice g) {
    switch (g) {
        case GraphChoice::Both: return "both";
        case GraphChoice::BipartiteOnly: return "bipartite-only";
        case GraphChoice::StatuteOnly: return "statute-only";
        case GraphChoice::None: return "none";
    }
    return "?";
}

void Stage2Config::validate() const {
    if (lambda_con < 0.0 || lambda_kd < 0.0) {
        throw ConfigError("stage 2: loss weights must be non-negative");
    }
    if (lambda_con + lambda_kd <= 0.0) {
        throw ConfigError("stage 2: at least one loss weight must be positive");
    }
    if (epochs < 1) throw ConfigError("stage 2: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("stage 2: batch size must be >= 1");
    if (lr <= 0.0) throw ConfigError("stage 2: learning rate must be positive");
    if (clip_norm <= 0.0) throw ConfigError("stage 2: clip norm must be positive");
    if (contrastive.tau <= 0.0) throw ConfigError("stage 2: temperature must be positive");
    if (contrastive.max_positives < 1) throw ConfigError("stage 2: need at least one positive");
    if (kd_mode != KdMode::None) {
        if (graph == GraphChoice::None) {
            throw ConfigError(std::string("stage 2: kd mode ") + kd_mode_name(kd_mode) +
                              " requires a graph");
        }
        if (graph == GraphChoice::StatuteOnly) {
            throw ConfigError(std::string("stage 2: kd mode ") + kd_mode_name(kd_mode) +
                              " needs query nodes; the statute-only graph has none");
        }
    }
    if (schedule == KdSchedule::Sequential && kd_mode == KdMode::None) {
        throw ConfigError("stage 2: the sequential schedule needs a kd mode");
    }
    if (graph != GraphChoice::None) gat.validate();
}

ScoreDistribution score_distribution(const Tensor& query_vec, const Tensor& article_rows) {
    if (article_rows.rank() != 2) {
        throw ShapeError("score distribution: article rows must be a matrix, got " +
                         article_rows.shape_str());
    }
    std::size_t m = article_rows.shape[0], dim = article_rows.shape[1];
    if (m == 0) throw ValidationError("score distribution: empty candidate list");
    if (query_vec.numel() != dim) {
        throw ShapeError("score distribution: query dim " + std::to_string(query_vec.numel()) +
                         " vs article dim " + std::to_string(dim));
    }

    ScoreDistribution dist;
    if (m == 1) {
        dist.probs = {1.0};
        dist.degenerate = true;
        return dist;
    }

    std::vector<double> scores(m, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) s += query_vec[k] * article_rows.at(j, k);
        scores[j] = s;
    }
    double hi = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - hi);
    dist.probs.resize(m);
    for (std::size_t j = 0; j < m; ++j) dist.probs[j] = std::exp(scores[j] - hi) / z;
    return dist;
}

namespace {
constexpr double kStudentFloor = 1e-12;
}

double kd_score_loss(const ScoreDistribution& teacher, const ScoreDistribution& student,
                     std::size_t* clamp_events) {
    if (teacher.probs.size() != student.probs.size()) {
        throw ValidationError("kd score loss: candidate lists differ in length");
    }
    double kl = 0.0;
    for (std::size_t j = 0; j < teacher.probs.size(); ++j) {
        double tp = teacher.probs[j];
        if (tp <= 0.0) continue;  // 0 * log(0 / s) contributes nothing
        double sp = student.probs[j];
        if (sp < kStudentFloor) {
            sp = kStudentFloor;
            if (clamp_events) ++*clamp_events;
        }
        kl += tp * std::log(tp / sp);
    }
    return kl;
}

double kd_feature_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& target) {
    if (student.empty() || student.size() != target.size()) {
        throw ValidationError("kd feature loss: batch sides must be non-empty and equal");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < student.size(); ++i) {
        if (student[i].numel() != target[i].numel()) {
            throw ShapeError("kd feature loss: vector dims differ at row " + std::to_string(i));
        }
        for (std::size_t k = 0; k < student[i].numel(); ++k) {
            double d = student[i][k] - target[i][k];
            total += d * d;
        }
    }
    return total / static_cast<double>(student.size());
}

double stage2_total(const Stage2Config& cfg, double contrastive, double kd) {
    return cfg.lambda_con * contrastive + cfg.lambda_kd * kd;
}

void write_stage2_curve_jsonl(const std::string& path,
                              const std::vector<Stage2CurvePoint>& curve) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (const Stage2CurvePoint& p : curve) {
        nlohmann::json j;
        j["step"] = p.step;
        j["epoch"] = p.epoch;
        j["phase"] = p.phase;
        j["total"] = p.total;
        j["contrastive"] = p.contrastive;
        j["kd"] = p.kd;
        j["lr"] = p.lr;
        out << j.dump() << "\n";
    }
}

namespace {

GraphMode to_graph_mode(GraphChoice g) {
    switch (g) {
        case GraphChoice::Both: return GraphMode::Both;
        case GraphChoice::BipartiteOnly: return GraphMode::BipartiteOnly;
        case GraphChoice::StatuteOnly: return GraphMode::StatuteOnly;
        case GraphChoice::None: break;
    }
    throw ConfigError("stage 2: graph choice none has no graph");
}

Tensor row_matrix(const Tensor& vec, std::size_t dim) {
    Tensor m = Tensor::zeros({1, dim});
    for (std::size_t k = 0; k < dim; ++k) m[k] = vec[k];
    return m;
}

/// The distillation candidate list of one batch row: the row's positives in
/// batch order, then its negative pool in the order the pair layout stores
/// it. At least two entries whenever the contrastive loss is computable.
std::vector<std::size_t> kd_slots(const ContrastiveBatch& batch, std::size_t row) {
    std::vector<std::size_t> slots = batch.queries[row].positives;
    for (const ContrastiveBatch::Pair& pair : batch.pairs) {
        if (pair.query_row != row) continue;
        slots.insert(slots.end(), pair.candidate_slots.begin() + 1, pair.candidate_slots.end());
        break;
    }
    return slots;
}

}  // namespace

Stage2Artifacts prepare_stage2(ParamStore& store, const BiEncoder& encoder,
                               const Corpus& corpus, const DatasetSplit& split,
                               const Stage2Config& cfg, std::uint64_t seed) {
    cfg.validate();
    Stage2Artifacts art;
    if (cfg.graph == GraphChoice::None) return art;
    if (cfg.gat.dim != encoder.config().dim) {
        throw ConfigError("stage 2: attention dim " + std::to_string(cfg.gat.dim) +
                          " does not match encoder dim " +
                          std::to_string(encoder.config().dim));
    }
    art.graph = build_graph(corpus, split.train, to_graph_mode(cfg.graph));
    Rng init = Rng(seed).fork(4);
    art.gat = GatStack(store, "gat.", cfg.gat, init);
    art.features = init_node_features(art.graph, encoder, corpus, split.train);
    return art;
}

namespace {

enum class Phase { Joint, ConOnly, KdOnly };

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::Joint: return "joint";
        case Phase::ConOnly: return "contrastive";
        case Phase::KdOnly: return "kd";
    }
    return "?";
}

struct KdTerms {
    Var loss;          // scalar, per the configured mode
    double value = 0;  // same, as a plain number
};

}  // namespace

Stage2Result stage2_train(ParamStore& store, BiEncoder& encoder, Stage2Artifacts& art,
                          const Corpus& corpus, const DatasetSplit& split,
                          const InvertedIndex& index, const Stage2Config& cfg,
                          std::uint64_t seed) {
    cfg.validate();
    Stage2Result result;
    if (cfg.graph == GraphChoice::None) return result;

    const std::vector<Query>& train = split.train;
    if (train.empty()) throw ValidationError("stage 2: empty training split");
    const HeteroGraph& graph = art.graph;
    const std::size_t dim = encoder.config().dim;
    const bool graph_has_queries = graph.mode != GraphMode::StatuteOnly;
    const bool kd_active = cfg.kd_mode != KdMode::None;
    const double tau = cfg.contrastive.tau;

    std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;

    AdamWConfig ocfg;
    ocfg.peak_lr = cfg.lr;
    ocfg.use_schedule = false;

    std::vector<Parameter*> con_params = art.gat.params(store);
    if (cfg.train_article_encoder) {
        for (Parameter* p : encoder.article_params(store)) con_params.push_back(p);
    }
    AdamW opt_con(con_params, ocfg);
    AdamW opt_query(encoder.query_params(store), ocfg);

    Rng master(seed);
    Rng shuffle_rng = master.fork(1);
    Rng batch_rng = master.fork(2);
    Rng dropout_rng = master.fork(3);

    std::vector<Phase> phases;
    if (cfg.schedule == KdSchedule::Joint) {
        phases.push_back(Phase::Joint);
    } else {
        phases.push_back(Phase::ConOnly);
        phases.push_back(Phase::KdOnly);
    }

    Tensor features = art.features;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t step = 0, epoch_global = 0;
    for (Phase phase : phases) {
        bool step_con = phase != Phase::KdOnly;
        bool step_kd = kd_active && phase != Phase::ConOnly;

        // with the graph side frozen, the refined node matrix is a constant
        // of the whole distillation phase
        Tensor refined;
        if (phase == Phase::KdOnly && !cfg.refresh_features) {
            refined = art.gat.forward_eval(graph, features);
        }

        for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
            ++epoch_global;
            shuffle_rng.shuffle(order);
            double epoch_con = 0.0, epoch_kd = 0.0;

            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                std::size_t end = std::min(order.size(), start + cfg.batch_size);
                std::vector<std::size_t> batch_queries(order.begin() + start,
                                                       order.begin() + end);
                ++step;
                for (Parameter* p : store.all()) p->zero_grad();

                if (cfg.refresh_features) {
                    features = init_node_features(graph, encoder, corpus, train);
                    if (phase == Phase::KdOnly) refined = art.gat.forward_eval(graph, features);
                }

                ContrastiveBatch batch = build_contrastive_batch(corpus, train, batch_queries,
                                                                 index, cfg.contrastive,
                                                                 batch_rng, seed);
                std::size_t bsz = batch.queries.size();

                Tape t;
                double con_val = 0.0, kd_val = 0.0;
                Var lcon, lkd;

                // graph-side representations of the batch: either live on
                // the tape (contrastive phases) or frozen rows (kd phase)
                std::vector<Var> q_rows(bsz);
                std::vector<Tensor> teacher_q(bsz);
                Tensor cand_values;  // {slots, dim}, detached

                if (step_con) {
                    std::vector<std::size_t> seeds;
                    std::vector<std::size_t> q_local(bsz, HeteroGraph::npos);
                    if (graph_has_queries) {
                        for (std::size_t i = 0; i < bsz; ++i) {
                            q_local[i] = seeds.size();
                            seeds.push_back(graph.query_node[batch.queries[i].query]);
                        }
                    }
                    std::vector<std::size_t> slot_local(batch.articles.size());
                    for (std::size_t s = 0; s < batch.articles.size(); ++s) {
                        slot_local[s] = seeds.size();
                        seeds.push_back(graph.article_node[batch.articles[s]]);
                    }
                    SubgraphBatch sub = sample_subgraph(graph, seeds, cfg.gat.layers);

                    Var f;
                    if (cfg.train_article_encoder) {
                        std::vector<Var> rows;
                        rows.reserve(sub.nodes.size());
                        for (std::size_t node : sub.nodes) {
                            const GraphNode& gn = graph.nodes[node];
                            if (gn.type == NodeType::Article) {
                                Var enc = encoder.encode_article(
                                    t, corpus.articles[gn.ref].tokens, true, dropout_rng);
                                rows.push_back(t.reshape(enc, {1, dim}));
                            } else {
                                Tensor row = Tensor::zeros({1, dim});
                                for (std::size_t k = 0; k < dim; ++k) {
                                    row[k] = features.at(node, k);
                                }
                                rows.push_back(t.constant(std::move(row)));
                            }
                        }
                        f = rows.size() == 1 ? rows[0] : t.concat_rows(rows);
                    } else {
                        Tensor ball = Tensor::zeros({sub.nodes.size(), dim});
                        for (std::size_t i = 0; i < sub.nodes.size(); ++i) {
                            for (std::size_t k = 0; k < dim; ++k) {
                                ball.at(i, k) = features.at(sub.nodes[i], k);
                            }
                        }
                        f = t.constant(std::move(ball));
                    }
                    Var out = art.gat.forward(t, sub.adj, f);

                    for (std::size_t i = 0; i < bsz; ++i) {
                        if (graph_has_queries) {
                            q_rows[i] = t.gather_rows(out, {q_local[i]});
                        } else {
                            Tensor qb = encoder.encode_query_eval(
                                train[batch.queries[i].query].tokens);
                            q_rows[i] = t.constant(row_matrix(qb, dim));
                        }
                        teacher_q[i] = t.value(q_rows[i]);
                    }
                    Var cand = t.gather_rows(out, slot_local);  // {slots, dim}
                    cand_values = t.value(cand);
                    Var scores = t.scale(t.matmul(t.concat_rows(q_rows), t.transpose(cand)),
                                         1.0 / tau);
                    lcon = contrastive_loss(t, scores, batch);
                    con_val = t.value(lcon)[0];
                } else {
                    // frozen graph: read representations out of the refined matrix
                    cand_values = Tensor::zeros({batch.articles.size(), dim});
                    for (std::size_t s = 0; s < batch.articles.size(); ++s) {
                        std::size_t node = graph.article_node[batch.articles[s]];
                        for (std::size_t k = 0; k < dim; ++k) {
                            cand_values.at(s, k) = refined.at(node, k);
                        }
                    }
                    for (std::size_t i = 0; i < bsz; ++i) {
                        std::size_t node = graph.query_node[batch.queries[i].query];
                        teacher_q[i] = Tensor::zeros({1, dim});
                        for (std::size_t k = 0; k < dim; ++k) {
                            teacher_q[i][k] = refined.at(node, k);
                        }
                    }
                }

                if (step_kd) {
                    std::vector<Var> parts;
                    std::vector<Var> feat_parts;
                    for (std::size_t i = 0; i < bsz; ++i) {
                        Var qb = encoder.encode_query(t, train[batch.queries[i].query].tokens,
                                                      true, dropout_rng);
                        if (cfg.kd_mode != KdMode::Feature) {
                            std::vector<std::size_t> slots = kd_slots(batch, i);
                            std::size_t m = slots.size();
                            Tensor pm = Tensor::zeros({m, dim});
                            for (std::size_t j = 0; j < m; ++j) {
                                for (std::size_t k = 0; k < dim; ++k) {
                                    pm.at(j, k) = cand_values.at(slots[j], k);
                                }
                            }
                            ScoreDistribution teacher = score_distribution(teacher_q[i], pm);

                            Var logits = t.matmul(t.reshape(qb, {1, dim}),
                                                  t.transpose(t.constant(pm)));
                            Var lse = t.log_sum_exp(logits);
                            Var lse_col = t.matmul(t.constant(Tensor::full({m, 1}, 1.0)),
                                                   t.reshape(lse, {1, 1}));
                            Var logp = t.sub(t.reshape(logits, {m}), t.reshape(lse_col, {m}));
                            const Tensor& lp = t.value(logp);
                            const double floor_log = std::log(kStudentFloor);
                            for (std::size_t j = 0; j < m; ++j) {
                                if (lp[j] < floor_log && teacher.probs[j] > 0.0) {
                                    ++result.clamp_events;
                                }
                            }
                            logp = t.clamp_min(logp, floor_log);

                            double t_log_t = 0.0;
                            for (double tp : teacher.probs) {
                                if (tp > 0.0) t_log_t += tp * std::log(tp);
                            }
                            Var kl = t.add_const(t.scale(t.dot(t.constant(Tensor::vec(teacher.probs)),
                                                               logp),
                                                         -1.0),
                                                 t_log_t);
                            parts.push_back(kl);
                        }
                        if (cfg.kd_mode != KdMode::Score) {
                            Tensor target = Tensor::zeros({dim});
                            for (std::size_t k = 0; k < dim; ++k) target[k] = teacher_q[i][k];
                            Var diff = t.sub(qb, t.constant(std::move(target)));
                            feat_parts.push_back(t.dot(diff, diff));
                        }
                    }
                    Var score_sum, feat_mean;
                    if (!parts.empty()) {
                        score_sum = t.sum(parts.size() == 1 ? parts[0] : t.concat_rows(parts));
                    }
                    if (!feat_parts.empty()) {
                        feat_mean = t.mean(feat_parts.size() == 1 ? feat_parts[0]
                                                                  : t.concat_rows(feat_parts));
                    }
                    switch (cfg.kd_mode) {
                        case KdMode::Score: lkd = score_sum; break;
                        case KdMode::Feature: lkd = feat_mean; break;
                        case KdMode::Both:
                            lkd = t.add(t.scale(score_sum, 0.5), t.scale(feat_mean, 0.5));
                            break;
                        case KdMode::None: break;
                    }
                    kd_val = t.value(lkd)[0];
                }

                Var total;
                double total_val = 0.0;
                if (step_con && step_kd) {
                    total = t.add(t.scale(lcon, cfg.lambda_con), t.scale(lkd, cfg.lambda_kd));
                } else if (step_con) {
                    total = lcon;
                } else {
                    total = lkd;
                }
                total_val = t.value(total)[0];
                if (!std::isfinite(total_val)) {
                    throw NumericError("stage 2: non-finite loss at step " +
                                       std::to_string(step));
                }
                t.backward(total);
                if (step_con) {
                    opt_con.clip_global_norm(cfg.clip_norm);
                    opt_con.step();
                }
                if (step_kd) {
                    opt_query.clip_global_norm(cfg.clip_norm);
                    opt_query.step();
                }

                result.curve.push_back({step, epoch_global, phase_name(phase), total_val,
                                        con_val, kd_val, cfg.lr});
                epoch_con += con_val;
                epoch_kd += kd_val;
            }

            result.epoch_contrastive.push_back(epoch_con / static_cast<double>(steps_per_epoch));
            result.epoch_kd.push_back(epoch_kd / static_cast<double>(steps_per_epoch));
        }
    }

    if (cfg.refresh_features || cfg.train_article_encoder) {
        art.features = init_node_features(graph, encoder, corpus, train);
    }
    return result;
}

ArticleMatrixFile export_article_embeddings(const BiEncoder& encoder, const Corpus& corpus,
                                            const Stage2Artifacts& art) {
    ArticleMatrixFile file;
    file.ids.reserve(corpus.articles.size());
    for (const Article& a : corpus.articles) file.ids.push_back(a.id);

    if (art.graph.size() == 0) {
        file.vectors = build_article_index(encoder, corpus).vectors;
        return file;
    }
    std::size_t dim = art.features.shape[1];
    Tensor refined = art.gat.forward_eval(art.graph, art.features);
    file.vectors = Tensor::zeros({corpus.articles.size(), dim});
    for (std::size_t a = 0; a < corpus.articles.size(); ++a) {
        std::size_t node = art.graph.article_node[a];
        for (std::size_t k = 0; k < dim; ++k) file.vectors.at(a, k) = refined.at(node, k);
    }
    return file;
}

std::vector<DenseHit> infer_rank(const BiEncoder& encoder, const ArticleMatrixFile& index,
                                 const std::vector<std::size_t>& query_tokens, std::size_t k) {
    if (index.vectors.rank() != 2 || index.vectors.shape[0] != index.ids.size()) {
        throw ValidationError("inference: malformed article matrix");
    }
    if (index.vectors.shape[1] != encoder.config().dim) {
        throw ValidationError("inference: index dim " + std::to_string(index.vectors.shape[1]) +
                              " does not match encoder dim " +
                              std::to_string(encoder.config().dim));
    }
    Tensor q = encoder.encode_query_eval(query_tokens);
    ArticleMatrix am{index.vectors};
    return dense_topk(am, q, k);
}

}  // namespace statret
