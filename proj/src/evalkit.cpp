#include "mgeo/evalkit.hpp"

#include <algorithm>
#include <cmath>

#include "mgeo/rng.hpp"

namespace mgeo::eval {

RankingResult rank_candidates(const std::string& query_id, const std::string& gold,
                              std::vector<std::pair<std::string, double>> scored) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    RankingResult r;
    r.query_id = query_id;
    r.gold = gold;
    r.ordered.reserve(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) {
        r.ordered.push_back(scored[i].first);
        if (scored[i].first == gold) r.gold_rank = static_cast<int>(i) + 1;
    }
    return r;
}

double recall_at_k(const std::vector<RankingResult>& results, int k) {
    if (results.empty()) throw EvalError("recall over an empty result set");
    if (k < 1) throw EvalError("recall rank must be at least 1");
    size_t hits = 0;
    for (const auto& r : results)
        if (r.gold_rank >= 1 && r.gold_rank <= k) ++hits;
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mrr_at_k(const std::vector<RankingResult>& results, int k) {
    if (results.empty()) throw EvalError("mrr over an empty result set");
    if (k < 1) throw EvalError("mrr rank must be at least 1");
    double sum = 0.0;
    for (const auto& r : results)
        if (r.gold_rank >= 1 && r.gold_rank <= k) sum += 1.0 / static_cast<double>(r.gold_rank);
    return sum / static_cast<double>(results.size());
}

std::map<std::string, double> standard_metrics(const std::vector<RankingResult>& results) {
    std::map<std::string, double> m;
    for (int k : kRecallRanks) m["recall@" + std::to_string(k)] = recall_at_k(results, k);
    for (int k : kMrrRanks) m["mrr@" + std::to_string(k)] = mrr_at_k(results, k);
    return m;
}

std::vector<RankingResult> run_ranking(const CorpusBundle& bundle,
                                       const std::vector<std::string>& query_ids,
                                       const CandidateScorer& scorer) {
    std::vector<RankingResult> out;
    out.reserve(query_ids.size());
    for (const auto& qid : query_ids) {
        const Query& q = bundle.query(qid);
        std::vector<double> scores = scorer(q, q.candidates);
        if (scores.size() != q.candidates.size())
            throw EvalError("scorer returned a mis-sized score list for query " + qid);
        std::vector<std::pair<std::string, double>> scored;
        scored.reserve(scores.size());
        for (size_t i = 0; i < scores.size(); ++i) scored.emplace_back(q.candidates[i], scores[i]);
        out.push_back(rank_candidates(qid, q.gold, std::move(scored)));
    }
    return out;
}

std::vector<RankingResult> run_retrieval(const CorpusBundle& bundle,
                                         const std::vector<std::string>& query_ids,
                                         const QueryVectorFn& query_vec,
                                         const std::vector<std::string>& pool,
                                         const PoiVectorFn& poi_vec, int k_max) {
    if (k_max < 1) throw EvalError("retrieval depth must be at least 1");
    std::vector<Eigen::RowVectorXd> vecs;
    vecs.reserve(pool.size());
    for (const auto& pid : pool) vecs.push_back(poi_vec(pid));

    std::vector<RankingResult> out;
    out.reserve(query_ids.size());
    for (const auto& qid : query_ids) {
        const Query& q = bundle.query(qid);
        Eigen::RowVectorXd qv = query_vec(q);
        double qn = std::max(qv.norm(), 1e-12);
        std::vector<std::pair<std::string, double>> scored;
        scored.reserve(pool.size());
        for (size_t i = 0; i < pool.size(); ++i) {
            double pn = std::max(vecs[i].norm(), 1e-12);
            scored.emplace_back(pool[i], qv.dot(vecs[i]) / (qn * pn));
        }
        RankingResult full = rank_candidates(qid, q.gold, std::move(scored));
        if (static_cast<int>(full.ordered.size()) > k_max) {
            full.ordered.resize(static_cast<size_t>(k_max));
            if (full.gold_rank > k_max) full.gold_rank = 0;
        }
        out.push_back(std::move(full));
    }
    return out;
}

std::vector<SliceMetrics> slice_by_query_type(const std::vector<RankingResult>& results,
                                              const CorpusBundle& bundle) {
    std::map<std::string, std::vector<RankingResult>> buckets;
    for (const auto& r : results)
        buckets[query_type_name(bundle.query(r.query_id).query_type)].push_back(r);
    std::vector<SliceMetrics> out;
    for (auto& [name, rs] : buckets) {
        SliceMetrics sm;
        sm.slice = name;
        sm.queries = rs.size();
        sm.metrics = standard_metrics(rs);
        out.push_back(std::move(sm));
    }
    return out;
}

std::vector<std::string> queries_keeping_gc(std::vector<std::string> ids, double percent,
                                            uint64_t seed) {
    if (percent < 0.0 || percent > 1.0) throw EvalError("GC percentage must lie in [0, 1]");
    std::sort(ids.begin(), ids.end());
    Rng rng(seed, "eval.gc_percent");
    rng.shuffle(ids);
    size_t keep = static_cast<size_t>(
        std::llround(percent * static_cast<double>(ids.size())));
    ids.resize(keep);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<int> truncate_prefix(const std::vector<int>& tokens, double drop_fraction) {
    if (drop_fraction < 0.0 || drop_fraction > 1.0)
        throw EvalError("truncation fraction must lie in [0, 1]");
    if (drop_fraction == 0.0 || tokens.empty()) return tokens;
    size_t drop = static_cast<size_t>(
        std::floor(drop_fraction * static_cast<double>(tokens.size())));
    size_t keep = tokens.size() - drop;
    if (keep == 0) keep = 1;
    return std::vector<int>(tokens.begin(), tokens.begin() + static_cast<long>(keep));
}

}  // namespace mgeo::eval
