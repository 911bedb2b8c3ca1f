// Command-line driver: generate / index / train / eval / infer over run
// directories. Exit codes: 0 success, 1 usage or configuration error,
// 2 data validation error, 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "statret/errors.hpp"
#include "statret/rundir.hpp"
#include "statret/synthetic.hpp"

using namespace statret;

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string data_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool data_given = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_file, "flat key/value config file");
    cmd->add_option("--set", flags.overrides, "config override, section.key=value (repeatable)");
    cmd->add_option("--data", flags.data_dir, "dataset directory (overrides run.data)")
        ->each([&flags](const std::string&) { flags.data_given = true; });
    cmd->add_option("--seed", flags.seed, "random seed (overrides run.seed)")
        ->each([&flags](const std::string&) { flags.seed_given = true; });
}

ExperimentConfig resolve_config(const CommonFlags& flags) {
    KeyValueConfig kv;
    if (!flags.config_file.empty()) kv = KeyValueConfig::parse_file(flags.config_file);
    apply_overrides(kv, flags.overrides);
    if (flags.data_given) kv.set("run.data", flags.data_dir);
    if (flags.seed_given) kv.set("run.seed", std::to_string(flags.seed));
    return experiment_from_kv(kv);
}

std::string metric_summary(const EvalReport& report) {
    std::ostringstream out;
    out << report.config << ":";
    char buf[64];
    for (std::size_t i = 0; i < report.k_list.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "  R@%zu %.4f", report.k_list[i], report.mean_recall[i]);
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "  MAP %.4f  MRP %.4f", report.map, report.mrp);
    out << buf << "\n";
    return out.str();
}

int cmd_generate(SyntheticSpec& spec, std::size_t total_queries, bool total_given,
                 bool train_given, std::uint64_t seed, const std::string& out_dir) {
    if (total_given) {
        if (train_given) {
            throw ConfigError("give either --queries or --train-queries, not both");
        }
        std::size_t reserved = spec.val_queries + spec.test_queries;
        if (total_queries <= reserved) {
            throw ConfigError("--queries must exceed the " + std::to_string(reserved) +
                              " validation and test queries");
        }
        spec.train_queries = total_queries - reserved;
    }
    LoadedDataset data = generate_synthetic(spec, seed);
    save_dataset(out_dir, data.corpus, data.split);
    std::cout << "wrote " << out_dir << ": " << data.corpus.size() << " articles, "
              << data.split.train.size() << " train / " << data.split.validation.size()
              << " val / " << data.split.test.size() << " test queries, vocab "
              << data.corpus.vocab.size() << "\n";
    return 0;
}

int cmd_index(const CommonFlags& flags, std::string out_dir) {
    ExperimentConfig cfg = resolve_config(flags);
    if (out_dir.empty()) out_dir = (fs::path(cfg.out_dir) / "bm25").string();
    run_bm25(out_dir, cfg);
    std::cout << "wrote " << out_dir << " over " << cfg.data_dir << "\n";
    return 0;
}

int cmd_train(const CommonFlags& flags, int stage, const std::string& stage1_dir,
              std::string out_dir, const std::string& name, const std::string& kd_mode,
              const std::string& graph, const std::string& schedule) {
    CommonFlags merged = flags;
    if (!kd_mode.empty()) merged.overrides.push_back("stage2.kd_mode=" + kd_mode);
    if (!graph.empty()) merged.overrides.push_back("stage2.graph=" + graph);
    if (!schedule.empty()) merged.overrides.push_back("stage2.schedule=" + schedule);
    ExperimentConfig cfg = resolve_config(merged);

    if (stage == 1) {
        std::string label = name.empty() ? stage1_config_name(cfg.encoder) : name;
        if (out_dir.empty()) out_dir = (fs::path(cfg.out_dir) / label).string();
        Stage1Result res = run_stage1(out_dir, cfg, name);
        std::cout << "stage 1 [" << label << "] -> " << out_dir << "\n";
        char buf[128];
        std::snprintf(buf, sizeof(buf), "  %zu epochs, mean loss %.4f -> %.4f\n",
                      cfg.stage1.epochs, res.epoch_mean_loss.front(), res.epoch_mean_loss.back());
        std::cout << buf;
        if (res.best_val_recall >= 0.0) {
            std::snprintf(buf, sizeof(buf), "  kept epoch %zu, validation R@%zu %.4f\n",
                          res.best_epoch, cfg.stage1.selection_k, res.best_val_recall);
            std::cout << buf;
        }
        return 0;
    }

    if (stage1_dir.empty()) {
        throw ConfigError("--stage 2 requires --stage1 with a trained stage-1 run directory");
    }
    std::string label = name.empty() ? stage2_config_name(cfg.stage2) : name;
    if (out_dir.empty()) out_dir = (fs::path(cfg.out_dir) / label).string();
    Stage2Result res = run_stage2(out_dir, stage1_dir, cfg, name);
    std::cout << "stage 2 [" << label << "] -> " << out_dir << "\n";
    char buf[160];
    double last_con =
        res.epoch_contrastive.empty() ? 0.0 : res.epoch_contrastive.back();
    double last_kd = res.epoch_kd.empty() ? 0.0 : res.epoch_kd.back();
    std::snprintf(buf, sizeof(buf),
                  "  %zu steps, last epoch contrastive %.4f, kd %.6f, clamp events %zu\n",
                  res.curve.size(), last_con, last_kd, res.clamp_events);
    std::cout << buf;
    return 0;
}

int cmd_eval(const std::vector<std::string>& runs, const std::string& split,
             const std::vector<std::size_t>& k_flag, const std::string& data_flag,
             const std::string& table_file) {
    std::vector<std::string> dirs;
    bool any_literal = false;
    for (const std::string& r : runs) {
        if (r == "bm25" && !fs::is_directory(r)) {
            any_literal = true;
        } else {
            dirs.push_back(r);
        }
    }

    RunEvaluation dir_ev;
    if (!dirs.empty()) dir_ev = evaluate_runs(dirs, split, k_flag);

    std::vector<std::size_t> ks = k_flag;
    if (ks.empty()) ks = dirs.empty() ? ExperimentConfig{}.eval_k : dir_ev.reports[0].k_list;

    EvalReport literal_report;
    if (any_literal) {
        std::string data_dir = data_flag;
        if (data_dir.empty() && !dirs.empty()) data_dir = load_run_dir(dirs[0]).manifest.data_dir;
        if (data_dir.empty()) {
            throw ConfigError("eval over the bare bm25 baseline needs --data");
        }
        if (!dirs.empty() && !data_flag.empty()) {
            std::string run_data = load_run_dir(dirs[0]).manifest.data_dir;
            if (fs::weakly_canonical(data_flag) != fs::weakly_canonical(run_data)) {
                throw ValidationError("--data '" + data_flag + "' does not match the runs' dataset '" +
                                      run_data + "'");
            }
        }
        LoadedDataset data = load_dataset(data_dir);
        const std::vector<Query>& queries = split_queries(data.split, split);
        InvertedIndex index = build_index(data.corpus, ExperimentConfig{}.bm25);
        const Corpus* corpus = &data.corpus;
        const InvertedIndex* idx = &index;
        literal_report = evaluate("bm25", data.corpus, queries, ks, [corpus, idx](const Query& q) {
            std::vector<std::size_t> ranked;
            for (const SearchHit& h : idx->search_topk(q.tokens, corpus->size())) {
                ranked.push_back(h.article);
            }
            return ranked;
        });
    }

    // reports back in argument order
    std::vector<EvalReport> reports;
    std::size_t next_dir = 0;
    for (const std::string& r : runs) {
        if (r == "bm25" && !fs::is_directory(r)) {
            reports.push_back(literal_report);
        } else {
            reports.push_back(dir_ev.reports[next_dir++]);
        }
    }

    std::string text;
    if (reports.size() >= 2) {
        text = comparison_table(reports);
    } else {
        text = metric_summary(reports[0]);
    }
    std::cout << text;
    if (!table_file.empty()) {
        std::ofstream out(table_file);
        if (!out) throw ValidationError("cannot write " + table_file);
        out << text;
        std::cout << "table -> " << table_file << "\n";
    }
    return 0;
}

int cmd_infer(const std::string& run_dir, const std::string& query_text, std::size_t k,
              const std::string& data_flag) {
    LoadedRun run = load_run_dir(run_dir);
    std::string data_dir = data_flag.empty() ? run.manifest.data_dir : data_flag;
    LoadedDataset data = load_dataset(data_dir);
    std::vector<InferHit> hits = infer_from_run(run, data.corpus, query_text, k);
    if (hits.empty()) {
        std::cout << "no results\n";
        return 0;
    }
    char buf[160];
    for (std::size_t i = 0; i < hits.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%2zu. %-24s %.6f\n", i + 1, hits[i].id.c_str(),
                      hits[i].score);
        std::cout << buf;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"statutory article retrieval: two-stage dense retriever experiments"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    // generate
    CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset directory");
    SyntheticSpec spec;
    std::size_t total_queries = 0;
    std::uint64_t gen_seed = 1;
    std::string gen_out;
    generate->add_option("--topics", spec.topics, "topic count");
    generate->add_option("--articles-per-topic", spec.articles_per_topic, "articles per topic");
    generate->add_option("--section-size", spec.section_size, "articles per section");
    generate->add_option("--sections-per-chapter", spec.sections_per_chapter,
                         "sections per chapter");
    CLI::Option* total_opt = generate->add_option(
        "--queries", total_queries, "total queries; train = total - val - test");
    CLI::Option* train_opt =
        generate->add_option("--train-queries", spec.train_queries, "training queries");
    generate->add_option("--val-queries", spec.val_queries, "validation queries");
    generate->add_option("--test-queries", spec.test_queries, "test queries");
    generate->add_option("--relevant-min", spec.relevant_min, "min relevant articles per query");
    generate->add_option("--relevant-max", spec.relevant_max, "max relevant articles per query");
    generate->add_option("--noise", spec.noise_rate, "noise token rate");
    generate->add_option("--query-len", spec.query_len, "tokens per query");
    generate->add_option("--seed", gen_seed, "generation seed");
    generate->add_option("--out", gen_out, "output dataset directory")->required();

    // index
    CLI::App* index = app.add_subcommand("index", "build the sparse baseline run directory");
    CommonFlags index_flags;
    std::string index_out;
    add_common(index, index_flags);
    index->add_option("--out", index_out, "run directory (default <run.out>/bm25)");

    // train
    CLI::App* train = app.add_subcommand("train", "train stage 1 or stage 2 into a run directory");
    CommonFlags train_flags;
    int stage = 0;
    std::string stage1_dir, train_out, train_name, kd_mode, graph, schedule;
    train->add_option("--stage", stage, "1: bi-encoder, 2: graph + distillation")
        ->required()
        ->check(CLI::Range(1, 2));
    add_common(train, train_flags);
    train->add_option("--stage1", stage1_dir, "stage-1 run directory (stage 2 only)");
    train->add_option("--out", train_out, "run directory (default <run.out>/<name>)");
    train->add_option("--name", train_name, "report label (default derived from the config)");
    train->add_option("--kd-mode", kd_mode, "score | feature | both | none");
    train->add_option("--graph", graph, "both | bipartite-only | statute-only | none");
    train->add_option("--schedule", schedule, "joint | sequential");

    // eval
    CLI::App* eval = app.add_subcommand("eval", "evaluate run directories over a split");
    std::vector<std::string> eval_runs;
    std::string eval_split = "test", eval_data, eval_table;
    std::vector<std::size_t> eval_k;
    eval->add_option("--runs", eval_runs, "run directories, or the literal bm25")->required();
    eval->add_option("--split", eval_split, "train | val | test");
    eval->add_option("--k", eval_k, "recall cutoffs (default from the first run's config)")
        ->delimiter(',');
    eval->add_option("--data", eval_data, "dataset directory for the bare bm25 baseline");
    eval->add_option("--table", eval_table, "also write the comparison table to this file");

    // infer
    CLI::App* infer = app.add_subcommand("infer", "rank articles for one free-text question");
    std::string infer_run, infer_query, infer_data;
    std::size_t infer_k = 10;
    infer->add_option("--run", infer_run, "run directory")->required();
    infer->add_option("--query", infer_query, "question text")->required();
    infer->add_option("--k", infer_k, "results to print");
    infer->add_option("--data", infer_data, "dataset directory (default from the run)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*generate) {
            return cmd_generate(spec, total_queries, total_opt->count() > 0,
                                train_opt->count() > 0, gen_seed, gen_out);
        }
        if (*index) return cmd_index(index_flags, index_out);
        if (*train) {
            return cmd_train(train_flags, stage, stage1_dir, train_out, train_name, kd_mode,
                             graph, schedule);
        }
        if (*eval) return cmd_eval(eval_runs, eval_split, eval_k, eval_data, eval_table);
        if (*infer) return cmd_infer(infer_run, infer_query, infer_k, infer_data);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
