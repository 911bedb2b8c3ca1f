#include "statret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "statret/errors.hpp"

namespace statret {

using nlohmann::json;

double recall_at_k(const std::vector<std::size_t>& ranked,
                   const std::unordered_set<std::size_t>& relevant, std::size_t k) {
    if (k < 1) throw ConfigError("recall: k must be >= 1");
    if (relevant.empty()) throw ValidationError("recall: empty relevant set");
    std::size_t hits = 0;
    std::size_t upto = std::min(k, ranked.size());
    for (std::size_t i = 0; i < upto; ++i) {
        if (relevant.count(ranked[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double average_precision(const std::vector<std::size_t>& ranked,
                         const std::unordered_set<std::size_t>& relevant) {
    if (relevant.empty()) throw ValidationError("average precision: empty relevant set");
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        if (relevant.count(ranked[i])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    // relevant documents outside the ranking contribute zero
    return sum / static_cast<double>(relevant.size());
}

double r_precision(const std::vector<std::size_t>& ranked,
                   const std::unordered_set<std::size_t>& relevant) {
    if (relevant.empty()) throw ValidationError("r-precision: empty relevant set");
    return recall_at_k(ranked, relevant, relevant.size());
}

const std::vector<std::string>& known_configs() {
    static const std::vector<std::string> names = {
        "bm25",
        "be-flat",
        "be",
        "be+ge-stat",
        "qabisar",
        "qabisar-no-kd",
        "qabisar-feature-kd",
        "qabisar-both-kd",
        "qabisar-sequential",
        "qabisar-bipartite-only",
        "qabisar-statute-only",
        "qabisar-no-graph",
    };
    return names;
}

EvalReport evaluate(const std::string& config, const Corpus& corpus,
                    const std::vector<Query>& split, const std::vector<std::size_t>& k_list,
                    const RankerFn& ranker) {
    const std::vector<std::string>& names = known_configs();
    if (std::find(names.begin(), names.end(), config) == names.end()) {
        std::string msg = "unknown retriever configuration '" + config + "'; valid names:";
        for (const std::string& n : names) msg += " " + n;
        throw ConfigError(msg);
    }
    if (k_list.empty()) throw ConfigError("evaluate: k list must not be empty");

    EvalReport report;
    report.config = config;
    report.k_list = k_list;
    report.mean_recall.assign(k_list.size(), 0.0);

    for (const Query& q : split) {
        std::vector<std::size_t> ranked = ranker(q);
        std::unordered_set<std::size_t> seen;
        for (std::size_t a : ranked) {
            if (!seen.insert(a).second) {
                throw ValidationError("ranking for query " + q.id + " contains a duplicate article");
            }
        }
        std::unordered_set<std::size_t> relevant;
        for (const std::string& rid : q.relevant_ids) relevant.insert(corpus.article_index(rid));

        QueryEval qe;
        qe.query_id = q.id;
        for (std::size_t k : k_list) qe.recall.push_back(recall_at_k(ranked, relevant, k));
        qe.ap = average_precision(ranked, relevant);
        qe.rprec = r_precision(ranked, relevant);

        for (std::size_t i = 0; i < k_list.size(); ++i) report.mean_recall[i] += qe.recall[i];
        report.map += qe.ap;
        report.mrp += qe.rprec;
        report.split_ids.push_back(q.id);
        report.per_query.push_back(std::move(qe));
    }
    if (!split.empty()) {
        double n = static_cast<double>(split.size());
        for (double& v : report.mean_recall) v /= n;
        report.map /= n;
        report.mrp /= n;
    }
    return report;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

std::string comparison_table(const std::vector<EvalReport>& reports) {
    if (reports.size() < 2) throw ValidationError("comparison needs at least two reports");
    for (std::size_t i = 1; i < reports.size(); ++i) {
        if (reports[i].split_ids != reports[0].split_ids) {
            throw ValidationError("reports cover different splits: '" + reports[i].config +
                                  "' vs '" + reports[0].config + "'");
        }
        if (reports[i].k_list != reports[0].k_list) {
            throw ValidationError("reports use different k lists: '" + reports[i].config +
                                  "' vs '" + reports[0].config + "'");
        }
    }

    const std::vector<std::size_t>& ks = reports[0].k_list;
    std::size_t metric_cols = ks.size() + 2;

    // column-wise maxima; ties are marked on every holder
    std::vector<double> best(metric_cols, -1.0);
    auto metric_of = [&](const EvalReport& r, std::size_t col) {
        if (col < ks.size()) return r.mean_recall[col];
        return col == ks.size() ? r.map : r.mrp;
    };
    for (const EvalReport& r : reports) {
        for (std::size_t c = 0; c < metric_cols; ++c) best[c] = std::max(best[c], metric_of(r, c));
    }

    std::size_t name_w = 6;
    for (const EvalReport& r : reports) name_w = std::max(name_w, r.config.size());

    std::ostringstream out;
    out << std::string(name_w, ' ');
    for (std::size_t k : ks) {
        std::string h = "R@" + std::to_string(k);
        out << "  " << std::string(h.size() < 8 ? 8 - h.size() : 0, ' ') << h;
    }
    out << "       MAP       MRP\n";
    for (const EvalReport& r : reports) {
        out << r.config << std::string(name_w - r.config.size(), ' ');
        for (std::size_t c = 0; c < metric_cols; ++c) {
            double v = metric_of(r, c);
            std::string cell = fmt(v);
            cell += (v == best[c]) ? "*" : " ";
            out << "  " << std::string(cell.size() < 10 ? 10 - cell.size() : 0, ' ') << cell;
        }
        out << "\n";
    }
    return out.str();
}

void write_report_jsonl(const std::string& path, const EvalReport& report) {
    auto check = [&](double v) {
        if (std::isnan(v)) throw NumericError("report for " + report.config + " contains NaN");
    };
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (std::size_t i = 0; i < report.k_list.size(); ++i) {
        check(report.mean_recall[i]);
        json j;
        j["config"] = report.config;
        j["metric"] = "recall";
        j["k"] = report.k_list[i];
        j["value"] = report.mean_recall[i];
        out << j.dump() << "\n";
    }
    check(report.map);
    check(report.mrp);
    json jm;
    jm["config"] = report.config;
    jm["metric"] = "map";
    jm["value"] = report.map;
    out << jm.dump() << "\n";
    json jr;
    jr["config"] = report.config;
    jr["metric"] = "rprec";
    jr["value"] = report.mrp;
    out << jr.dump() << "\n";
}

void write_query_breakdown_jsonl(const std::string& path, const EvalReport& report) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    for (const QueryEval& qe : report.per_query) {
        for (std::size_t i = 0; i < report.k_list.size(); ++i) {
            json j;
            j["config"] = report.config;
            j["query"] = qe.query_id;
            j["metric"] = "recall";
            j["k"] = report.k_list[i];
            j["value"] = qe.recall[i];
            out << j.dump() << "\n";
        }
        json ja;
        ja["config"] = report.config;
        ja["query"] = qe.query_id;
        ja["metric"] = "ap";
        ja["value"] = qe.ap;
        out << ja.dump() << "\n";
        json jr;
        jr["config"] = report.config;
        jr["query"] = qe.query_id;
        jr["metric"] = "rprec";
        jr["value"] = qe.rprec;
        out << jr.dump() << "\n";
    }
}

}  // namespace statret
