#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mgeo/geodata.hpp"

namespace mgeo::eval {

// Reported ranks: Recall at these cutoffs plus MRR at 5 and 10.
inline constexpr int kRecallRanks[] = {1, 3, 5, 20, 50, 100};
inline constexpr int kMrrRanks[] = {5, 10};

struct RankingResult {
    std::string query_id;
    std::string gold;
    std::vector<std::string> ordered;  // scored pool by descending score, ties by id ascending
    int gold_rank = 0;                 // 1-based; 0 when gold absent from the pool
};

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Sorts a scored pool into a RankingResult (score descending, id ascending on
// ties) and locates the gold.
RankingResult rank_candidates(const std::string& query_id, const std::string& gold,
                              std::vector<std::pair<std::string, double>> scored);

double recall_at_k(const std::vector<RankingResult>& results, int k);
double mrr_at_k(const std::vector<RankingResult>& results, int k);

// All reported ranks in one map, keys "recall@k" / "mrr@k".
std::map<std::string, double> standard_metrics(const std::vector<RankingResult>& results);

// Scores every candidate of each query through the supplied scorer.
using CandidateScorer =
    std::function<std::vector<double>(const Query& q, const std::vector<std::string>& poi_ids)>;
std::vector<RankingResult> run_ranking(const CorpusBundle& bundle,
                                       const std::vector<std::string>& query_ids,
                                       const CandidateScorer& scorer);

// Dense retrieval over a full pool: POI vectors are produced once, each query
// is scored against every pool entry by cosine, and the top k_max survive.
using PoiVectorFn = std::function<Eigen::RowVectorXd(const std::string& poi_id)>;
using QueryVectorFn = std::function<Eigen::RowVectorXd(const Query& q)>;
std::vector<RankingResult> run_retrieval(const CorpusBundle& bundle,
                                         const std::vector<std::string>& query_ids,
                                         const QueryVectorFn& query_vec,
                                         const std::vector<std::string>& pool,
                                         const PoiVectorFn& poi_vec, int k_max);

// Per-query-type slices of an existing result set.
struct SliceMetrics {
    std::string slice;
    size_t queries = 0;
    std::map<std::string, double> metrics;
};
std::vector<SliceMetrics> slice_by_query_type(const std::vector<RankingResult>& results,
                                              const CorpusBundle& bundle);

// Deterministic per-query selection keeping `percent` of the ids' GC at
// evaluation time (the rest are scored GC-less).
std::vector<std::string> queries_keeping_gc(std::vector<std::string> ids, double percent,
                                            uint64_t seed);

// Prefix truncation: drops the trailing `drop_fraction` of tokens, keeping at
// least one when the input is non-empty; 0 is the identity.
std::vector<int> truncate_prefix(const std::vector<int>& tokens, double drop_fraction);

}  // namespace mgeo::eval
