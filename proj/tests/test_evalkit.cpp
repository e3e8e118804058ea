#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mgeo/evalkit.hpp"
#include "mgeo/rng.hpp"
#include "testutil.hpp"

using namespace mgeo;
using namespace testutil;
using eval::RankingResult;

namespace {

RankingResult at_rank(const std::string& qid, int gold_rank) {
    RankingResult r;
    r.query_id = qid;
    r.gold = "g";
    r.gold_rank = gold_rank;
    return r;
}

// Bundle with queries only; ranking and slicing never touch objects or POIs.
CorpusBundle query_bundle(std::vector<Query> queries) {
    CorpusBundle b;
    b.queries = std::move(queries);
    b.rebuild_indexes();
    return b;
}

Eigen::RowVectorXd random_vec(Rng& rng, int dim) {
    Eigen::RowVectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = rng.uniform() * 2.0 - 1.0;
    return v;
}

}  // namespace

TEST_CASE("candidate ranking orders by score then id and locates the gold") {
    RankingResult r = eval::rank_candidates(
        "q1", "c", {{"b", 0.5}, {"a", 0.9}, {"c", 0.5}});
    CHECK(r.query_id == "q1");
    CHECK(r.gold == "c");
    CHECK(r.ordered == std::vector<std::string>{"a", "b", "c"});
    CHECK(r.gold_rank == 3);

    RankingResult missing = eval::rank_candidates("q2", "zz", {{"a", 1.0}, {"b", 0.0}});
    CHECK(missing.gold_rank == 0);

    RankingResult empty = eval::rank_candidates("q3", "g", {});
    CHECK(empty.ordered.empty());
    CHECK(empty.gold_rank == 0);
}

TEST_CASE("gold rank agrees with a direct counting oracle on random pools") {
    Rng rng(3, "rank.oracle");
    for (int rep = 0; rep < 1000; ++rep) {
        int n = 2 + static_cast<int>(rng.below(12));
        std::vector<std::pair<std::string, double>> scored;
        for (int i = 0; i < n; ++i) {
            // Coarse scores force plenty of ties.
            double s = static_cast<double>(rng.below(4)) / 4.0;
            scored.emplace_back("p" + std::to_string(i), s);
        }
        size_t gold_i = rng.below(static_cast<uint64_t>(n));
        const std::string gold = scored[gold_i].first;
        const double gold_score = scored[gold_i].second;

        int ahead = 0;
        for (const auto& [id, s] : scored) {
            if (s > gold_score || (s == gold_score && id < gold)) ++ahead;
        }
        RankingResult r = eval::rank_candidates("q", gold, scored);
        CHECK(r.gold_rank == ahead + 1);
        CHECK(r.ordered[static_cast<size_t>(ahead)] == gold);

        for (size_t i = 1; i < r.ordered.size(); ++i) {
            auto score_of = [&](const std::string& id) {
                for (const auto& [pid, s] : scored)
                    if (pid == id) return s;
                return -1.0;
            };
            double prev = score_of(r.ordered[i - 1]), cur = score_of(r.ordered[i]);
            CHECK(prev >= cur);
            if (prev == cur) CHECK(r.ordered[i - 1] < r.ordered[i]);
        }
    }
}

TEST_CASE("recall counts golds within the cutoff") {
    std::vector<RankingResult> rs{at_rank("a", 1), at_rank("b", 4), at_rank("c", 2)};
    CHECK(eval::recall_at_k(rs, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(eval::recall_at_k(rs, 2) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(eval::recall_at_k(rs, 3) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(eval::recall_at_k(rs, 4) == 1.0);

    rs.push_back(at_rank("d", 0));  // gold missing never counts
    CHECK(eval::recall_at_k(rs, 100) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("mean reciprocal rank sums inverse ranks within the cutoff") {
    std::vector<RankingResult> rs{at_rank("a", 1), at_rank("b", 4), at_rank("c", 2)};
    CHECK(eval::mrr_at_k(rs, 10) ==
          doctest::Approx((1.0 + 0.25 + 0.5) / 3.0).epsilon(1e-15));
    CHECK(eval::mrr_at_k(rs, 3) == doctest::Approx((1.0 + 0.5) / 3.0).epsilon(1e-15));
    CHECK(eval::mrr_at_k(rs, 1) == eval::recall_at_k(rs, 1));
}

TEST_CASE("metrics agree with independent accumulations on random result sets") {
    Rng rng(7, "metric.oracle");
    for (int rep = 0; rep < 1000; ++rep) {
        int n = 1 + static_cast<int>(rng.below(30));
        std::vector<RankingResult> rs;
        for (int i = 0; i < n; ++i)
            rs.push_back(at_rank("q" + std::to_string(i), static_cast<int>(rng.below(13))));
        int k = 1 + static_cast<int>(rng.below(10));

        int hits = 0;
        double recip = 0.0;
        for (const auto& r : rs) {
            if (r.gold_rank >= 1 && r.gold_rank <= k) {
                ++hits;
                recip += 1.0 / r.gold_rank;
            }
        }
        CHECK(eval::recall_at_k(rs, k) == static_cast<double>(hits) / n);
        CHECK(eval::mrr_at_k(rs, k) == recip / n);
        // Widening the cutoff never loses a hit.
        CHECK(eval::recall_at_k(rs, k + 5) >= eval::recall_at_k(rs, k));
        CHECK(eval::mrr_at_k(rs, k + 5) >= eval::mrr_at_k(rs, k));
    }
}

TEST_CASE("metric helpers reject empty inputs and non-positive ranks") {
    std::vector<RankingResult> empty;
    CHECK_THROWS_WITH_AS(eval::recall_at_k(empty, 1), "recall over an empty result set",
                         eval::EvalError);
    CHECK_THROWS_WITH_AS(eval::mrr_at_k(empty, 1), "mrr over an empty result set",
                         eval::EvalError);
    std::vector<RankingResult> one{at_rank("a", 1)};
    CHECK_THROWS_WITH_AS(eval::recall_at_k(one, 0), "recall rank must be at least 1",
                         eval::EvalError);
    CHECK_THROWS_WITH_AS(eval::mrr_at_k(one, 0), "mrr rank must be at least 1", eval::EvalError);
}

TEST_CASE("the standard metric table reports all cutoffs") {
    std::vector<RankingResult> rs{at_rank("a", 1), at_rank("b", 7), at_rank("c", 30)};
    auto m = eval::standard_metrics(rs);
    REQUIRE(m.size() == 8);
    for (int k : {1, 3, 5, 20, 50, 100}) {
        const std::string key = "recall@" + std::to_string(k);
        REQUIRE(m.count(key) == 1);
        CHECK(m[key] == eval::recall_at_k(rs, k));
    }
    for (int k : {5, 10}) {
        const std::string key = "mrr@" + std::to_string(k);
        REQUIRE(m.count(key) == 1);
        CHECK(m[key] == eval::mrr_at_k(rs, k));
    }
}

TEST_CASE("ranking a bundle scores each query's own candidates") {
    Query q1;
    q1.id = "q1";
    q1.gold = "p2";
    q1.candidates = {"p1", "p2", "p3"};
    Query q2;
    q2.id = "q2";
    q2.gold = "p1";
    q2.candidates = {"p1", "p3"};
    CorpusBundle bundle = query_bundle({q1, q2});

    auto scorer = [](const Query& q, const std::vector<std::string>& ids) {
        std::vector<double> s;
        for (const auto& id : ids) s.push_back(q.id == "q1" && id == "p2" ? 2.0 : 1.0);
        return s;
    };
    auto rs = eval::run_ranking(bundle, {"q1", "q2"}, scorer);
    REQUIRE(rs.size() == 2);
    CHECK(rs[0].gold_rank == 1);
    CHECK(rs[0].ordered == std::vector<std::string>{"p2", "p1", "p3"});
    CHECK(rs[1].gold_rank == 1);  // tie between p1 and p3 broken by id

    auto bad_scorer = [](const Query&, const std::vector<std::string>&) {
        return std::vector<double>{1.0};
    };
    CHECK_THROWS_WITH_AS(eval::run_ranking(bundle, {"q1"}, bad_scorer),
                         "scorer returned a mis-sized score list for query q1", eval::EvalError);
}

TEST_CASE("retrieval over the candidate pool reproduces candidate ranking") {
    const int dim = 8, n_pois = 30, n_queries = 12;
    Rng rng(11, "retrieval.vecs");

    std::vector<std::string> pool;
    std::map<std::string, Eigen::RowVectorXd> poi_vecs;
    for (int i = 0; i < n_pois; ++i) {
        std::string id = "p" + std::to_string(i);
        pool.push_back(id);
        poi_vecs[id] = random_vec(rng, dim);
    }
    std::vector<Query> queries;
    std::map<std::string, Eigen::RowVectorXd> query_vecs;
    std::vector<std::string> qids;
    for (int i = 0; i < n_queries; ++i) {
        Query q;
        q.id = "q" + std::to_string(i);
        q.candidates = pool;
        q.gold = "p" + std::to_string(static_cast<int>(rng.below(n_pois)));
        queries.push_back(q);
        query_vecs[q.id] = random_vec(rng, dim);
        qids.push_back(q.id);
    }
    CorpusBundle bundle = query_bundle(queries);

    auto qvec = [&](const Query& q) { return query_vecs.at(q.id); };
    auto pvec = [&](const std::string& id) { return poi_vecs.at(id); };
    auto retrieved = eval::run_retrieval(bundle, qids, qvec, pool, pvec, n_pois);

    auto cosine_scorer = [&](const Query& q, const std::vector<std::string>& ids) {
        const Eigen::RowVectorXd& qv = query_vecs.at(q.id);
        double qn = std::max(qv.norm(), 1e-12);
        std::vector<double> s;
        for (const auto& id : ids) {
            const Eigen::RowVectorXd& pv = poi_vecs.at(id);
            s.push_back(qv.dot(pv) / (qn * std::max(pv.norm(), 1e-12)));
        }
        return s;
    };
    auto ranked = eval::run_ranking(bundle, qids, cosine_scorer);

    REQUIRE(retrieved.size() == ranked.size());
    for (size_t i = 0; i < retrieved.size(); ++i) {
        CHECK(retrieved[i].query_id == ranked[i].query_id);
        CHECK(retrieved[i].ordered == ranked[i].ordered);
        CHECK(retrieved[i].gold_rank == ranked[i].gold_rank);
    }

    // Depth-limited retrieval keeps the head of the full ordering and zeroes
    // out-of-depth golds.
    auto top5 = eval::run_retrieval(bundle, qids, qvec, pool, pvec, 5);
    for (size_t i = 0; i < top5.size(); ++i) {
        REQUIRE(top5[i].ordered.size() == 5);
        for (int j = 0; j < 5; ++j)
            CHECK(top5[i].ordered[static_cast<size_t>(j)] ==
                  retrieved[i].ordered[static_cast<size_t>(j)]);
        if (retrieved[i].gold_rank <= 5)
            CHECK(top5[i].gold_rank == retrieved[i].gold_rank);
        else
            CHECK(top5[i].gold_rank == 0);
    }

    CHECK_THROWS_WITH_AS(eval::run_retrieval(bundle, qids, qvec, pool, pvec, 0),
                         "retrieval depth must be at least 1", eval::EvalError);
}

TEST_CASE("depth-limited retrieval on a hand example") {
    Query q;
    q.id = "q1";
    q.gold = "c";
    CorpusBundle bundle = query_bundle({q});

    std::map<std::string, Eigen::RowVectorXd> vecs;
    vecs["a"] = Eigen::RowVectorXd::Zero(2);
    vecs["a"] << 1.0, 0.0;
    vecs["b"] = Eigen::RowVectorXd::Zero(2);
    vecs["b"] << 0.9, 0.1;
    vecs["c"] = Eigen::RowVectorXd::Zero(2);
    vecs["c"] << 0.0, 1.0;
    Eigen::RowVectorXd qv(2);
    qv << 1.0, 0.0;

    auto qvec = [&](const Query&) { return qv; };
    auto pvec = [&](const std::string& id) { return vecs.at(id); };
    std::vector<std::string> pool{"a", "b", "c"};

    auto top2 = eval::run_retrieval(bundle, {"q1"}, qvec, pool, pvec, 2);
    REQUIRE(top2.size() == 1);
    CHECK(top2[0].ordered == std::vector<std::string>{"a", "b"});
    CHECK(top2[0].gold_rank == 0);

    auto top3 = eval::run_retrieval(bundle, {"q1"}, qvec, pool, pvec, 3);
    CHECK(top3[0].ordered == std::vector<std::string>{"a", "b", "c"});
    CHECK(top3[0].gold_rank == 3);
}

TEST_CASE("slices split the results by query type") {
    Query a1, a2, s1, c1;
    a1.id = "a1";
    a1.query_type = QueryType::ADDRESS;
    a2.id = "a2";
    a2.query_type = QueryType::ADDRESS;
    s1.id = "s1";
    s1.query_type = QueryType::STREET_NO;
    c1.id = "c1";
    c1.query_type = QueryType::COLLOQUIAL;
    CorpusBundle bundle = query_bundle({a1, a2, s1, c1});

    std::vector<RankingResult> rs{at_rank("a1", 1), at_rank("a2", 2), at_rank("s1", 1),
                                  at_rank("c1", 0)};
    auto slices = eval::slice_by_query_type(rs, bundle);
    REQUIRE(slices.size() == 3);
    CHECK(slices[0].slice == "ADDRESS");
    CHECK(slices[0].queries == 2);
    CHECK(slices[0].metrics["recall@1"] == 0.5);
    CHECK(slices[1].slice == "COLLOQUIAL");
    CHECK(slices[1].queries == 1);
    CHECK(slices[1].metrics["recall@100"] == 0.0);
    CHECK(slices[2].slice == "STREET_NO");
    CHECK(slices[2].queries == 1);
    CHECK(slices[2].metrics["mrr@5"] == 1.0);
}

TEST_CASE("the GC-keeping subset is a deterministic fraction of the ids") {
    std::vector<std::string> ids;
    for (int i = 0; i < 10; ++i) ids.push_back("q" + std::to_string(i));

    CHECK(eval::queries_keeping_gc(ids, 0.0, 5).empty());

    auto all = eval::queries_keeping_gc(ids, 1.0, 5);
    auto sorted_ids = ids;
    std::sort(sorted_ids.begin(), sorted_ids.end());
    CHECK(all == sorted_ids);

    auto half = eval::queries_keeping_gc(ids, 0.5, 5);
    CHECK(half.size() == 5);
    CHECK(std::is_sorted(half.begin(), half.end()));
    for (const auto& id : half)
        CHECK(std::find(ids.begin(), ids.end(), id) != ids.end());

    // Same seed, same subset -- regardless of the input order.
    auto shuffled = ids;
    Rng rng(13, "shuffle.input");
    rng.shuffle(shuffled);
    CHECK(eval::queries_keeping_gc(shuffled, 0.5, 5) == half);

    // Fractional counts round to nearest.
    CHECK(eval::queries_keeping_gc(ids, 0.25, 5).size() == 3);  // llround(2.5)
    CHECK(eval::queries_keeping_gc(ids, 0.54, 5).size() == 5);

    CHECK_THROWS_WITH_AS(eval::queries_keeping_gc(ids, -0.1, 5),
                         "GC percentage must lie in [0, 1]", eval::EvalError);
    CHECK_THROWS_WITH_AS(eval::queries_keeping_gc(ids, 1.1, 5),
                         "GC percentage must lie in [0, 1]", eval::EvalError);
}

TEST_CASE("prefix truncation drops a trailing fraction but keeps one token") {
    std::vector<int> toks{5, 6, 7, 8};
    CHECK(eval::truncate_prefix(toks, 0.0) == toks);
    CHECK(eval::truncate_prefix(toks, 0.5) == std::vector<int>{5, 6});
    CHECK(eval::truncate_prefix(toks, 1.0) == std::vector<int>{5});

    std::vector<int> ten(10);
    for (int i = 0; i < 10; ++i) ten[static_cast<size_t>(i)] = 5 + i;
    CHECK(eval::truncate_prefix(ten, 0.3).size() == 7);  // floor(3) dropped

    CHECK(eval::truncate_prefix({}, 1.0).empty());
    CHECK_THROWS_WITH_AS(eval::truncate_prefix(toks, -0.01),
                         "truncation fraction must lie in [0, 1]", eval::EvalError);
    CHECK_THROWS_WITH_AS(eval::truncate_prefix(toks, 1.01),
                         "truncation fraction must lie in [0, 1]", eval::EvalError);
}
