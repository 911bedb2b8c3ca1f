#include "statret/rundir.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "statret/errors.hpp"
#include "statret/graph.hpp"

using nlohmann::json;

namespace statret {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Shortest round-trip decimal form, so serialized configs re-parse to the
// exact same double.
std::string fmt_double(double v) { return json(v).dump(); }

double parse_double_value(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse '" + v + "' as a number");
    }
}

std::uint64_t parse_unsigned_value(const std::string& key, const std::string& v) {
    try {
        if (v.find('-') != std::string::npos) throw std::invalid_argument("negative");
        std::size_t pos = 0;
        std::uint64_t u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing characters");
        return u;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse '" + v + "' as an unsigned integer");
    }
}

bool parse_bool_value(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": cannot parse '" + v + "' as a bool (true/false)");
}

std::string canonical_split(const std::string& name) {
    if (name == "train") return "train";
    if (name == "val" || name == "validation") return "val";
    if (name == "test") return "test";
    throw ConfigError("unknown split '" + name + "'; choose train, val or test");
}

void check_registry_name(const std::string& name) {
    const std::vector<std::string>& names = known_configs();
    if (std::find(names.begin(), names.end(), name) != names.end()) return;
    std::string msg = "unknown retriever configuration '" + name + "'; valid names:";
    for (const std::string& n : names) msg += " " + n;
    throw ConfigError(msg);
}

std::vector<std::string> article_ids(const Corpus& corpus) {
    std::vector<std::string> ids;
    ids.reserve(corpus.size());
    for (const Article& a : corpus.articles) ids.push_back(a.id);
    return ids;
}

}  // namespace

void KeyValueConfig::set(const std::string& key, const std::string& value) {
    std::string k = trim(key);
    if (k.empty()) throw ConfigError("config key must not be empty");
    values_[k] = trim(value);
}

bool KeyValueConfig::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& KeyValueConfig::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config key " + key + " is not set");
    return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_double_value(key, it->second);
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return static_cast<std::size_t>(parse_unsigned_value(key, it->second));
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_unsigned_value(key, it->second);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_bool_value(key, it->second);
}

std::vector<std::size_t> KeyValueConfig::get_size_list(
    const std::string& key, const std::vector<std::size_t>& fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::size_t> out;
    std::stringstream ss(it->second);
    std::string piece;
    while (std::getline(ss, piece, ',')) {
        out.push_back(static_cast<std::size_t>(parse_unsigned_value(key, trim(piece))));
    }
    if (out.empty()) throw ConfigError("config key " + key + ": list must not be empty");
    return out;
}

std::vector<std::string> KeyValueConfig::keys() const {
    std::vector<std::string> out;
    out.reserve(values_.size());
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

std::string KeyValueConfig::serialize() const {
    std::ostringstream out;
    // keys without a section first, so re-parsing never folds them into one
    bool any = false;
    for (const auto& [key, value] : values_) {
        if (key.find('.') != std::string::npos) continue;
        out << key << " = " << value << "\n";
        any = true;
    }
    std::string section;
    for (const auto& [key, value] : values_) {
        std::size_t dot = key.find('.');
        if (dot == std::string::npos) continue;
        std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (any) out << "\n";
            out << "[" << sec << "]\n";
            section = sec;
            any = true;
        }
        out << key.substr(dot + 1) << " = " << value << "\n";
    }
    return out.str();
}

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
    KeyValueConfig kv;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']' || t.size() < 3) {
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": malformed section header '" + t + "'");
            }
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) {
                throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            }
            continue;
        }
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value, got '" + t + "'");
        }
        std::string key = trim(t.substr(0, eq));
        if (key.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        }
        if (!section.empty()) key = section + "." + key;
        kv.set(key, t.substr(eq + 1));
    }
    return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

void apply_overrides(KeyValueConfig& kv, const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
        std::size_t eq = o.find('=');
        if (eq == std::string::npos || trim(o.substr(0, eq)).empty()) {
            throw ConfigError("override '" + o + "' must look like section.key=value");
        }
        kv.set(o.substr(0, eq), o.substr(eq + 1));
    }
}

void ExperimentConfig::validate() const {
    if (data_dir.empty()) throw ConfigError("data directory must not be empty");
    if (bm25.k1 <= 0.0) throw ConfigError("bm25 k1 must be positive");
    if (bm25.b < 0.0 || bm25.b > 1.0) throw ConfigError("bm25 b must lie in [0, 1]");
    encoder.validate();
    stage1.validate();
    stage2.validate();
    if (eval_k.empty()) throw ConfigError("eval k list must not be empty");
    for (std::size_t k : eval_k) {
        if (k < 1) throw ConfigError("eval k values must be >= 1");
    }
}

namespace {

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "run.data", "run.out", "run.seed",
        "bm25.k1", "bm25.b",
        "encoder.dim", "encoder.layers", "encoder.heads", "encoder.ff_dim", "encoder.dropout",
        "encoder.chunk_len", "encoder.max_chunks", "encoder.hierarchical",
        "stage1.epochs", "stage1.batch_size", "stage1.peak_lr", "stage1.clip_norm",
        "stage1.selection_k",
        "contrastive.tau", "contrastive.max_positives", "contrastive.num_negatives",
        "contrastive.include_other_negatives",
        "stage2.lambda_con", "stage2.lambda_kd", "stage2.epochs", "stage2.batch_size",
        "stage2.lr", "stage2.clip_norm", "stage2.kd_mode", "stage2.schedule", "stage2.graph",
        "stage2.refresh_features", "stage2.train_article_encoder",
        "gat.layers", "gat.heads", "gat.dim", "gat.leaky_slope",
        "eval.k",
    };
    return keys;
}

}  // namespace

ExperimentConfig experiment_from_kv(const KeyValueConfig& kv) {
    const std::vector<std::string>& known = known_config_keys();
    std::string unknown;
    for (const std::string& k : kv.keys()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) unknown += " " + k;
    }
    if (!unknown.empty()) throw ConfigError("unknown config keys:" + unknown);

    ExperimentConfig cfg;
    cfg.data_dir = kv.get_string("run.data", cfg.data_dir);
    cfg.out_dir = kv.get_string("run.out", cfg.out_dir);
    cfg.seed = kv.get_u64("run.seed", cfg.seed);

    cfg.bm25.k1 = kv.get_double("bm25.k1", cfg.bm25.k1);
    cfg.bm25.b = kv.get_double("bm25.b", cfg.bm25.b);

    EncoderConfig& e = cfg.encoder;
    e.dim = kv.get_size("encoder.dim", e.dim);
    e.layers = kv.get_size("encoder.layers", e.layers);
    e.heads = kv.get_size("encoder.heads", e.heads);
    e.ff_dim = kv.get_size("encoder.ff_dim", e.ff_dim);
    e.dropout = kv.get_double("encoder.dropout", e.dropout);
    e.chunk_len = kv.get_size("encoder.chunk_len", e.chunk_len);
    e.max_chunks = kv.get_size("encoder.max_chunks", e.max_chunks);
    e.hierarchical = kv.get_bool("encoder.hierarchical", e.hierarchical);

    Stage1Config& s1 = cfg.stage1;
    s1.epochs = kv.get_size("stage1.epochs", s1.epochs);
    s1.batch_size = kv.get_size("stage1.batch_size", s1.batch_size);
    s1.peak_lr = kv.get_double("stage1.peak_lr", s1.peak_lr);
    s1.clip_norm = kv.get_double("stage1.clip_norm", s1.clip_norm);
    s1.selection_k = kv.get_size("stage1.selection_k", s1.selection_k);

    ContrastiveConfig cc;
    cc.tau = kv.get_double("contrastive.tau", cc.tau);
    cc.max_positives = kv.get_size("contrastive.max_positives", cc.max_positives);
    cc.num_negatives = kv.get_size("contrastive.num_negatives", cc.num_negatives);
    cc.include_other_negatives =
        kv.get_bool("contrastive.include_other_negatives", cc.include_other_negatives);
    cfg.stage1.contrastive = cc;
    cfg.stage2.contrastive = cc;

    Stage2Config& s2 = cfg.stage2;
    s2.lambda_con = kv.get_double("stage2.lambda_con", s2.lambda_con);
    s2.lambda_kd = kv.get_double("stage2.lambda_kd", s2.lambda_kd);
    s2.epochs = kv.get_size("stage2.epochs", s2.epochs);
    s2.batch_size = kv.get_size("stage2.batch_size", s2.batch_size);
    s2.lr = kv.get_double("stage2.lr", s2.lr);
    s2.clip_norm = kv.get_double("stage2.clip_norm", s2.clip_norm);
    s2.kd_mode = parse_kd_mode(kv.get_string("stage2.kd_mode", kd_mode_name(s2.kd_mode)));
    s2.schedule = parse_kd_schedule(kv.get_string("stage2.schedule", kd_schedule_name(s2.schedule)));
    s2.graph = parse_graph_choice(kv.get_string("stage2.graph", graph_choice_name(s2.graph)));
    s2.refresh_features = kv.get_bool("stage2.refresh_features", s2.refresh_features);
    s2.train_article_encoder =
        kv.get_bool("stage2.train_article_encoder", s2.train_article_encoder);

    GatConfig& g = cfg.stage2.gat;
    g.layers = kv.get_size("gat.layers", g.layers);
    g.heads = kv.get_size("gat.heads", g.heads);
    g.dim = kv.has("gat.dim") ? kv.get_size("gat.dim", g.dim) : cfg.encoder.dim;
    g.leaky_slope = kv.get_double("gat.leaky_slope", g.leaky_slope);

    cfg.eval_k = kv.get_size_list("eval.k", cfg.eval_k);
    return cfg;
}

KeyValueConfig experiment_to_kv(const ExperimentConfig& cfg) {
    KeyValueConfig kv;
    kv.set("run.data", cfg.data_dir);
    kv.set("run.out", cfg.out_dir);
    kv.set("run.seed", std::to_string(cfg.seed));

    kv.set("bm25.k1", fmt_double(cfg.bm25.k1));
    kv.set("bm25.b", fmt_double(cfg.bm25.b));

    kv.set("encoder.dim", std::to_string(cfg.encoder.dim));
    kv.set("encoder.layers", std::to_string(cfg.encoder.layers));
    kv.set("encoder.heads", std::to_string(cfg.encoder.heads));
    kv.set("encoder.ff_dim", std::to_string(cfg.encoder.ff_dim));
    kv.set("encoder.dropout", fmt_double(cfg.encoder.dropout));
    kv.set("encoder.chunk_len", std::to_string(cfg.encoder.chunk_len));
    kv.set("encoder.max_chunks", std::to_string(cfg.encoder.max_chunks));
    kv.set("encoder.hierarchical", cfg.encoder.hierarchical ? "true" : "false");

    kv.set("stage1.epochs", std::to_string(cfg.stage1.epochs));
    kv.set("stage1.batch_size", std::to_string(cfg.stage1.batch_size));
    kv.set("stage1.peak_lr", fmt_double(cfg.stage1.peak_lr));
    kv.set("stage1.clip_norm", fmt_double(cfg.stage1.clip_norm));
    kv.set("stage1.selection_k", std::to_string(cfg.stage1.selection_k));

    const ContrastiveConfig& cc = cfg.stage1.contrastive;
    kv.set("contrastive.tau", fmt_double(cc.tau));
    kv.set("contrastive.max_positives", std::to_string(cc.max_positives));
    kv.set("contrastive.num_negatives", std::to_string(cc.num_negatives));
    kv.set("contrastive.include_other_negatives", cc.include_other_negatives ? "true" : "false");

    const Stage2Config& s2 = cfg.stage2;
    kv.set("stage2.lambda_con", fmt_double(s2.lambda_con));
    kv.set("stage2.lambda_kd", fmt_double(s2.lambda_kd));
    kv.set("stage2.epochs", std::to_string(s2.epochs));
    kv.set("stage2.batch_size", std::to_string(s2.batch_size));
    kv.set("stage2.lr", fmt_double(s2.lr));
    kv.set("stage2.clip_norm", fmt_double(s2.clip_norm));
    kv.set("stage2.kd_mode", kd_mode_name(s2.kd_mode));
    kv.set("stage2.schedule", kd_schedule_name(s2.schedule));
    kv.set("stage2.graph", graph_choice_name(s2.graph));
    kv.set("stage2.refresh_features", s2.refresh_features ? "true" : "false");
    kv.set("stage2.train_article_encoder", s2.train_article_encoder ? "true" : "false");

    kv.set("gat.layers", std::to_string(s2.gat.layers));
    kv.set("gat.heads", std::to_string(s2.gat.heads));
    kv.set("gat.dim", std::to_string(s2.gat.dim));
    kv.set("gat.leaky_slope", fmt_double(s2.gat.leaky_slope));

    std::string ks;
    for (std::size_t k : cfg.eval_k) ks += (ks.empty() ? "" : ",") + std::to_string(k);
    kv.set("eval.k", ks);
    return kv;
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
    if (manifest.kind != kKindBm25 && manifest.kind != kKindStage1 &&
        manifest.kind != kKindStage2) {
        throw ConfigError("unknown run kind '" + manifest.kind + "'");
    }
    check_registry_name(manifest.config_name);
    json j;
    j["kind"] = manifest.kind;
    j["config"] = manifest.config_name;
    j["seed"] = manifest.seed;
    j["data_dir"] = manifest.data_dir;
    if (!manifest.stage1_dir.empty()) j["stage1_dir"] = manifest.stage1_dir;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << j.dump(2) << "\n";
}

RunManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    for (const char* field : {"kind", "config", "seed", "data_dir"}) {
        if (!j.contains(field)) {
            throw ValidationError(path + " is not a run manifest: missing field " + field);
        }
    }
    RunManifest m;
    m.kind = j["kind"].get<std::string>();
    m.config_name = j["config"].get<std::string>();
    m.seed = j["seed"].get<std::uint64_t>();
    m.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("stage1_dir")) m.stage1_dir = j["stage1_dir"].get<std::string>();
    if (m.kind != kKindBm25 && m.kind != kKindStage1 && m.kind != kKindStage2) {
        throw ValidationError(path + ": unknown run kind '" + m.kind + "'");
    }
    return m;
}

namespace runfiles {
std::string report(const std::string& split) { return "report_" + canonical_split(split) + ".jsonl"; }
std::string breakdown(const std::string& split) {
    return "breakdown_" + canonical_split(split) + ".jsonl";
}
}  // namespace runfiles

std::string stage1_config_name(const EncoderConfig& cfg) {
    return cfg.hierarchical ? "be" : "be-flat";
}

std::string stage2_config_name(const Stage2Config& cfg) {
    switch (cfg.graph) {
        case GraphChoice::None: return "qabisar-no-graph";
        case GraphChoice::StatuteOnly: return "qabisar-statute-only";
        case GraphChoice::BipartiteOnly: return "qabisar-bipartite-only";
        case GraphChoice::Both: break;
    }
    if (cfg.schedule == KdSchedule::Sequential) return "qabisar-sequential";
    switch (cfg.kd_mode) {
        case KdMode::None: return "qabisar-no-kd";
        case KdMode::Feature: return "qabisar-feature-kd";
        case KdMode::Both: return "qabisar-both-kd";
        case KdMode::Score: break;
    }
    return "qabisar";
}

void init_run_dir(const std::string& dir, const RunManifest& manifest,
                  const ExperimentConfig& cfg) {
    cfg.validate();
    fs::create_directories(dir);
    fs::path base(dir);
    std::ofstream out(base / runfiles::kConfig);
    if (!out) throw ValidationError("cannot write " + (base / runfiles::kConfig).string());
    out << experiment_to_kv(cfg).serialize();
    out.close();
    write_manifest((base / runfiles::kManifest).string(), manifest);
}

LoadedRun load_run_dir(const std::string& dir) {
    fs::path base(dir);
    if (!fs::is_directory(base)) throw ValidationError("'" + dir + "' is not a directory");
    if (!fs::exists(base / runfiles::kManifest)) {
        throw ValidationError("'" + dir + "' is not a run directory: no " +
                              std::string(runfiles::kManifest));
    }
    LoadedRun run;
    run.dir = dir;
    run.manifest = read_manifest((base / runfiles::kManifest).string());
    run.config = experiment_from_kv(KeyValueConfig::parse_file((base / runfiles::kConfig).string()));
    return run;
}

RestoredModel restore_run_model(const LoadedRun& run, const Corpus& corpus) {
    if (run.manifest.kind == kKindBm25) {
        throw ValidationError("'" + run.dir + "' is a bm25 run and has no trained model");
    }
    RestoredModel m;
    Rng init(0);  // placeholder values, the checkpoint overwrites everything
    m.encoder = std::make_unique<BiEncoder>(m.store, run.config.encoder, corpus.vocab.size(), init);
    if (run.manifest.kind == kKindStage2 && run.config.stage2.graph != GraphChoice::None) {
        m.gat = std::make_unique<GatStack>(m.store, "gat.", run.config.stage2.gat, init);
    }
    load_checkpoint((fs::path(run.dir) / runfiles::kCheckpoint).string(), m.store);
    return m;
}

void run_bm25(const std::string& run_dir, const ExperimentConfig& cfg) {
    cfg.validate();
    LoadedDataset data = load_dataset(cfg.data_dir);
    InvertedIndex index = build_index(data.corpus, cfg.bm25);
    RunManifest manifest{kKindBm25, "bm25", cfg.seed, cfg.data_dir, ""};
    init_run_dir(run_dir, manifest, cfg);
    index.save((fs::path(run_dir) / runfiles::kIndex).string());
}

Stage1Result run_stage1(const std::string& run_dir, const ExperimentConfig& cfg,
                        const std::string& name) {
    cfg.validate();
    std::string label = name.empty() ? stage1_config_name(cfg.encoder) : name;
    LoadedDataset data = load_dataset(cfg.data_dir);
    InvertedIndex index = build_index(data.corpus, cfg.bm25);

    RunManifest manifest{kKindStage1, label, cfg.seed, cfg.data_dir, ""};
    init_run_dir(run_dir, manifest, cfg);

    ParamStore store;
    Rng init(cfg.seed);
    BiEncoder encoder(store, cfg.encoder, data.corpus.vocab.size(), init);
    Stage1Result result =
        stage1_train(store, encoder, data.corpus, data.split, index, cfg.stage1, cfg.seed);

    fs::path base(run_dir);
    save_checkpoint((base / runfiles::kCheckpoint).string(), store);
    write_curve_jsonl((base / runfiles::kCurve).string(), result.curve);
    ArticleMatrix matrix = build_article_index(encoder, data.corpus);
    save_article_matrix((base / runfiles::kArticleMatrix).string(), article_ids(data.corpus),
                        matrix.vectors);
    return result;
}

Stage2Result run_stage2(const std::string& run_dir, const std::string& stage1_dir,
                        const ExperimentConfig& cfg, const std::string& name) {
    LoadedRun s1 = load_run_dir(stage1_dir);
    if (s1.manifest.kind != kKindStage1) {
        throw ValidationError("stage 2 starts from a stage-1 run directory; '" + stage1_dir +
                              "' is a " + s1.manifest.kind + " run");
    }
    ExperimentConfig eff = cfg;
    eff.data_dir = s1.config.data_dir;
    eff.bm25 = s1.config.bm25;
    eff.encoder = s1.config.encoder;
    eff.stage1 = s1.config.stage1;
    // attention width has no freedom, it must match the restored encoder
    eff.stage2.gat.dim = eff.encoder.dim;
    eff.validate();
    std::string label = name.empty() ? stage2_config_name(eff.stage2) : name;

    LoadedDataset data = load_dataset(eff.data_dir);
    RestoredModel model = restore_run_model(s1, data.corpus);
    InvertedIndex index = build_index(data.corpus, eff.bm25);

    RunManifest manifest{kKindStage2, label, eff.seed, eff.data_dir, stage1_dir};
    init_run_dir(run_dir, manifest, eff);

    Stage2Artifacts art =
        prepare_stage2(model.store, *model.encoder, data.corpus, data.split, eff.stage2, eff.seed);
    Stage2Result result = stage2_train(model.store, *model.encoder, art, data.corpus, data.split,
                                       index, eff.stage2, eff.seed);

    fs::path base(run_dir);
    save_checkpoint((base / runfiles::kCheckpoint).string(), model.store);
    write_stage2_curve_jsonl((base / runfiles::kCurve).string(), result.curve);
    ArticleMatrixFile matrix = export_article_embeddings(*model.encoder, data.corpus, art);
    save_article_matrix((base / runfiles::kArticleMatrix).string(), matrix.ids, matrix.vectors);
    if (eff.stage2.graph != GraphChoice::None) {
        write_graph_jsonl((base / runfiles::kGraph).string(), art.graph);
    }
    return result;
}

namespace {

RankerFn make_run_ranker(const LoadedRun& run, const Corpus& corpus) {
    fs::path base(run.dir);
    const Corpus* c = &corpus;
    if (run.manifest.kind == kKindBm25) {
        auto index =
            std::make_shared<InvertedIndex>(InvertedIndex::load((base / runfiles::kIndex).string()));
        return [index, c](const Query& q) {
            std::vector<SearchHit> hits = index->search_topk(q.tokens, c->size());
            std::vector<std::size_t> ranked;
            ranked.reserve(hits.size());
            for (const SearchHit& h : hits) ranked.push_back(h.article);
            return ranked;
        };
    }
    auto model = std::make_shared<RestoredModel>(restore_run_model(run, corpus));
    auto matrix = std::make_shared<ArticleMatrixFile>(
        load_article_matrix((base / runfiles::kArticleMatrix).string()));
    return [model, matrix, c](const Query& q) {
        std::vector<DenseHit> hits = infer_rank(*model->encoder, *matrix, q.tokens, matrix->ids.size());
        std::vector<std::size_t> ranked;
        ranked.reserve(hits.size());
        for (const DenseHit& h : hits) ranked.push_back(c->article_index(matrix->ids[h.article]));
        return ranked;
    };
}

}  // namespace

const std::vector<Query>& split_queries(const DatasetSplit& split, const std::string& name) {
    std::string canon = canonical_split(name);
    const std::vector<Query>& queries = canon == "train" ? split.train
                                        : canon == "val" ? split.validation
                                                         : split.test;
    if (queries.empty()) throw ValidationError("split '" + canon + "' is empty");
    return queries;
}

RunEvaluation evaluate_runs(const std::vector<std::string>& run_dirs,
                            const std::string& split_name,
                            const std::vector<std::size_t>& k_list) {
    if (run_dirs.empty()) throw ConfigError("no run directories given");
    std::string split = canonical_split(split_name);

    std::vector<LoadedRun> runs;
    runs.reserve(run_dirs.size());
    for (const std::string& dir : run_dirs) runs.push_back(load_run_dir(dir));
    for (std::size_t i = 1; i < runs.size(); ++i) {
        if (fs::weakly_canonical(runs[i].manifest.data_dir) !=
            fs::weakly_canonical(runs[0].manifest.data_dir)) {
            throw ValidationError("run directories reference different datasets: '" +
                                  runs[i].manifest.data_dir + "' vs '" +
                                  runs[0].manifest.data_dir + "'");
        }
    }

    LoadedDataset data = load_dataset(runs[0].manifest.data_dir);
    const std::vector<Query>& queries = split_queries(data.split, split);
    std::vector<std::size_t> ks = k_list.empty() ? runs[0].config.eval_k : k_list;

    RunEvaluation ev;
    for (const LoadedRun& run : runs) {
        RankerFn ranker = make_run_ranker(run, data.corpus);
        EvalReport report = evaluate(run.manifest.config_name, data.corpus, queries, ks, ranker);
        fs::path base(run.dir);
        write_report_jsonl((base / runfiles::report(split)).string(), report);
        write_query_breakdown_jsonl((base / runfiles::breakdown(split)).string(), report);
        ev.reports.push_back(std::move(report));
    }
    if (ev.reports.size() >= 2) ev.table = comparison_table(ev.reports);
    return ev;
}

std::vector<InferHit> infer_from_run(const LoadedRun& run, const Corpus& corpus,
                                     const std::string& text, std::size_t k) {
    if (k < 1) throw ConfigError("k must be >= 1");
    std::vector<std::size_t> tokens = corpus.vocab.encode(text);
    fs::path base(run.dir);
    std::vector<InferHit> out;
    if (run.manifest.kind == kKindBm25) {
        InvertedIndex index = InvertedIndex::load((base / runfiles::kIndex).string());
        for (const SearchHit& h : index.search_topk(tokens, k)) {
            out.push_back({corpus.articles[h.article].id, h.score});
        }
        return out;
    }
    RestoredModel model = restore_run_model(run, corpus);
    ArticleMatrixFile matrix = load_article_matrix((base / runfiles::kArticleMatrix).string());
    for (const DenseHit& h : infer_rank(*model.encoder, matrix, tokens, k)) {
        out.push_back({matrix.ids[h.article], h.score});
    }
    return out;
}

}  // namespace statret
