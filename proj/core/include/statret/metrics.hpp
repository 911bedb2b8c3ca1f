#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_set>
#include <vector>

#include "statret/corpus.hpp"

namespace statret {

/// |top-k ∩ relevant| / |relevant|.
double recall_at_k(const std::vector<std::size_t>& ranked,
                   const std::unordered_set<std::size_t>& relevant, std::size_t k);

/// Mean over relevant documents of Precision@(their rank); relevant
/// documents missing from the ranking contribute zero.
double average_precision(const std::vector<std::size_t>& ranked,
                         const std::unordered_set<std::size_t>& relevant);

/// |top-R ∩ relevant| / R with R = |relevant|.
double r_precision(const std::vector<std::size_t>& ranked,
                   const std::unordered_set<std::size_t>& relevant);

struct QueryEval {
    std::string query_id;
    std::vector<double> recall;  // parallel to the report's k list
    double ap = 0.0;
    double rprec = 0.0;
};

struct EvalReport {
    std::string config;
    std::vector<std::size_t> k_list;
    std::vector<std::string> split_ids;  // evaluated query ids, in order
    std::vector<QueryEval> per_query;
    std::vector<double> mean_recall;
    double map = 0.0;
    double mrp = 0.0;
};

/// Retriever configurations the harness accepts, mirroring the comparison
/// rows: sparse baseline, flat and hierarchical bi-encoders, the
/// statute-graph baseline, the full two-stage model and its ablations.
const std::vector<std::string>& known_configs();

/// Full ranking (corpus article indices, best first) for one query.
using RankerFn = std::function<std::vector<std::size_t>(const Query&)>;

/// Runs the ranker over a split and aggregates. Throws ConfigError for an
/// unknown configuration name (message lists valid names), ValidationError
/// for duplicate ids in a ranking.
EvalReport evaluate(const std::string& config, const Corpus& corpus,
                    const std::vector<Query>& split, const std::vector<std::size_t>& k_list,
                    const RankerFn& ranker);

/// Aligned comparison with the best value per metric column marked (ties
/// marked on every holder). Throws ValidationError when reports cover
/// different splits or different k lists.
std::string comparison_table(const std::vector<EvalReport>& reports);

/// Line-delimited aggregate records (config, metric, k, value). Throws
/// NumericError if any value is NaN.
void write_report_jsonl(const std::string& path, const EvalReport& report);
/// Per-query breakdown records (config, query, metric, k, value).
void write_query_breakdown_jsonl(const std::string& path, const EvalReport& report);

}  // namespace statret
