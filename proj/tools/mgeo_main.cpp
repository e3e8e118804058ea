#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include <CLI11.hpp>

#include "mgeo/pipeline.hpp"
#include "mgeo/runconfig.hpp"

namespace {

struct Common {
    std::string out = "out";
    std::string config;
    std::string profile = "desk";
    uint64_t seed = 17;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--out", c.out, "Run root directory (stages write into subdirectories)")
        ->capture_default_str();
    sub->add_option("--config", c.config,
                    "Resolved run-config JSON; overrides --profile when given");
    sub->add_option("--profile", c.profile, "Built-in config profile: desk or paper")
        ->capture_default_str();
    sub->add_option("--seed", c.seed, "Seed for every named random stream")
        ->capture_default_str();
}

// 2 = usage error (bad flags, missing config file), 1 = runtime failure.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

mgeo::cfg::RunConfig build_config(const Common& c, const CLI::App* sub) {
    mgeo::cfg::RunConfig rc;
    if (!c.config.empty()) {
        if (!std::filesystem::exists(c.config))
            throw UsageError("config file not found: " + c.config);
        rc = mgeo::cfg::load_runconfig(c.config);
    } else {
        rc = mgeo::cfg::make_profile(c.profile);
    }
    if (sub->count("--seed") > 0) {
        rc.seed = c.seed;
        rc.gen.seed = c.seed;
    }
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Geographic pre-training pipeline for query-POI matching"};
    app.require_subcommand(1);

    Common common;
    int exit_code = 0;
    std::function<void()> action;

    // gen-bench
    auto* gen = app.add_subcommand("gen-bench", "Generate the synthetic benchmark corpus");
    Common gen_c;
    add_common(gen, gen_c);
    struct {
        int queries = -1, pois = -1, roads = -1, polygons = -1;
        int group_size = -1, train_cands = -1, eval_cands = -1;
        double collision = -1.0, near = -1.0;
    } g;
    gen->add_option("--queries", g.queries, "Number of queries");
    gen->add_option("--pois", g.pois, "Number of POIs");
    gen->add_option("--roads", g.roads, "Number of road objects");
    gen->add_option("--polygons", g.polygons, "Number of region objects");
    gen->add_option("--collision-rate", g.collision, "Fraction of POIs placed in name-collision groups");
    gen->add_option("--collision-group-size", g.group_size, "POIs per collision group");
    gen->add_option("--near-fraction", g.near, "Fraction of queries located within 1 km of their gold");
    gen->add_option("--train-candidates", g.train_cands, "Candidate list size for train queries");
    gen->add_option("--eval-candidates", g.eval_cands, "Candidate list size for dev/test queries");
    gen->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(gen_c, gen);
        if (g.queries >= 0) rc.gen.queries = g.queries;
        if (g.pois >= 0) rc.gen.pois = g.pois;
        if (g.roads >= 0) rc.gen.roads = g.roads;
        if (g.polygons >= 0) rc.gen.polygons = g.polygons;
        if (g.collision >= 0.0) rc.gen.collision_rate = g.collision;
        if (g.group_size >= 0) rc.gen.collision_group_size = g.group_size;
        if (g.near >= 0.0) rc.gen.near_fraction = g.near;
        if (g.train_cands >= 0) rc.gen.train_candidates = g.train_cands;
        if (g.eval_cands >= 0) rc.gen.eval_candidates = g.eval_cands;
        action = [rc, ws = mgeo::pipe::Workspace{gen_c.out}] {
            mgeo::pipe::run_gen(rc, ws);
            std::printf("corpus written to %s\n", ws.corpus_dir().c_str());
        };
    });

    // extract-gc
    auto* ext = app.add_subcommand("extract-gc", "Extract geographic-context caches for POIs and queries");
    Common ext_c;
    add_common(ext, ext_c);
    ext->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(ext_c, ext);
        action = [rc, ws = mgeo::pipe::Workspace{ext_c.out}] {
            mgeo::pipe::ExtractStats st;
            mgeo::pipe::run_extract_gc(rc, ws, &st);
            std::printf("gc cache: %zu poi and %zu query records computed\n",
                        st.poi_records_computed, st.query_records_computed);
        };
    });

    // pretrain-geo
    auto* pg = app.add_subcommand("pretrain-geo", "Train the geographic encoder (MGM + GCL)");
    Common pg_c;
    add_common(pg, pg_c);
    pg->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(pg_c, pg);
        action = [rc, ws = mgeo::pipe::Workspace{pg_c.out}] {
            mgeo::pipe::run_pretrain_geo(rc, ws);
            std::printf("geographic encoder checkpoint: %s\n", ws.geo_ckpt_path().c_str());
        };
    });

    // pretrain-mm
    auto* pm = app.add_subcommand("pretrain-mm", "Multi-modal pre-training of the interaction module");
    Common pm_c;
    add_common(pm, pm_c);
    pm->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(pm_c, pm);
        action = [rc, ws = mgeo::pipe::Workspace{pm_c.out}] {
            mgeo::pipe::run_pretrain_mm(rc, ws);
            std::printf("interaction checkpoint: %s\n", ws.mm_ckpt_path().c_str());
        };
    });

    // finetune
    auto* ft = app.add_subcommand("finetune", "Fine-tune a ranking head on the train split");
    Common ft_c;
    add_common(ft, ft_c);
    std::string ft_head = "bi", ft_variant;
    bool ft_text_only = false, ft_no_query_gc = false, ft_from_scratch = false;
    ft->add_option("--head", ft_head, "Ranking head: bi or cross")->capture_default_str();
    ft->add_option("--variant", ft_variant,
                   "Variant name (bi, bi-text, bi-noqgc, cross, cross-text); overrides the flags");
    ft->add_flag("--text-only", ft_text_only, "Drop both GC segments (text-only baseline)");
    ft->add_flag("--no-query-gc", ft_no_query_gc, "Drop the query-side GC segment only");
    ft->add_flag("--from-scratch", ft_from_scratch,
                 "Skip the multi-modal checkpoint (no-pre-training baseline)");
    ft->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(ft_c, ft);
        mgeo::pipe::FinetuneVariant v;
        if (!ft_variant.empty()) {
            v = mgeo::pipe::variant_from_name(ft_variant);
        } else {
            if (ft_head == "bi")
                v.head = mgeo::mm::Head::BI;
            else if (ft_head == "cross")
                v.head = mgeo::mm::Head::CROSS;
            else
                throw UsageError("unknown head: " + ft_head + " (expected bi or cross)");
            v.text_only = ft_text_only;
            v.no_query_gc = ft_no_query_gc;
            if (v.text_only && v.no_query_gc)
                throw UsageError("--text-only already drops the query GC; pick one flag");
        }
        action = [rc, v, ft_from_scratch, ws = mgeo::pipe::Workspace{ft_c.out}] {
            mgeo::mm::FinetuneResult res = mgeo::pipe::run_finetune(rc, ws, v, ft_from_scratch);
            std::printf("fine-tuned %s: best dev Recall@1 %.4f (epoch %d), checkpoint %s\n",
                        v.name().c_str(), res.best_dev_recall1, res.best_epoch,
                        ws.ft_ckpt_path(v.name()).c_str());
        };
    });

    // rank
    auto* rank = app.add_subcommand("rank", "Score each query's candidate list with a fine-tuned head");
    Common rank_c;
    add_common(rank, rank_c);
    std::string rank_variant = "bi", rank_split = "test", rank_prefix;
    rank->add_option("--variant", rank_variant, "Fine-tuned variant to score with")
        ->capture_default_str();
    rank->add_option("--split", rank_split, "Query split: train, dev or test")->capture_default_str();
    rank->add_option("--out-prefix", rank_prefix,
                     "Output prefix for .tsv (query, poi, score) and .json (metrics)");
    rank->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(rank_c, rank);
        mgeo::pipe::Workspace ws{rank_c.out};
        std::string prefix =
            rank_prefix.empty() ? ws.eval_dir() + "/rank-" + rank_variant + "-" + rank_split
                                : rank_prefix;
        action = [rc, ws, rank_variant, rank_split, prefix] {
            mgeo::pipe::run_rank(rc, ws, rank_variant, rank_split, prefix);
            std::printf("rankings written to %s.tsv\n", prefix.c_str());
        };
    });

    // retrieve
    auto* ret = app.add_subcommand("retrieve", "Dense retrieval over the full POI pool (bi-encoder)");
    Common ret_c;
    add_common(ret, ret_c);
    std::string ret_variant = "bi", ret_split = "test", ret_prefix;
    int ret_k = 100;
    ret->add_option("--variant", ret_variant, "Bi-encoder variant to embed with")
        ->capture_default_str();
    ret->add_option("--split", ret_split, "Query split: train, dev or test")->capture_default_str();
    ret->add_option("--k", ret_k, "Keep the top k POIs per query")->capture_default_str();
    ret->add_option("--out-prefix", ret_prefix,
                    "Output prefix for .tsv (query, poi, score) and .json (metrics)");
    ret->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(ret_c, ret);
        mgeo::pipe::Workspace ws{ret_c.out};
        std::string prefix =
            ret_prefix.empty() ? ws.eval_dir() + "/retrieve-" + ret_variant + "-" + ret_split
                               : ret_prefix;
        action = [rc, ws, ret_variant, ret_split, ret_k, prefix] {
            mgeo::pipe::run_retrieve(rc, ws, ret_variant, ret_split, ret_k, prefix);
            std::printf("retrieval written to %s.tsv\n", prefix.c_str());
        };
    });

    // eval
    auto* ev = app.add_subcommand("eval", "Write the metrics report for every fine-tuned variant");
    Common ev_c;
    add_common(ev, ev_c);
    ev->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(ev_c, ev);
        action = [rc, ws = mgeo::pipe::Workspace{ev_c.out}] {
            mgeo::pipe::run_eval(rc, ws);
            std::printf("metrics report: %s\n", ws.report_path().c_str());
        };
    });

    // ablate
    auto* ab = app.add_subcommand("ablate", "Evaluate one ablation axis on the test split");
    Common ab_c;
    add_common(ab, ab_c);
    std::string ab_axis;
    ab->add_option("--axis", ab_axis, "gc-percent, truncation or query-type")->required();
    ab->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(ab_c, ab);
        action = [rc, ab_axis, ws = mgeo::pipe::Workspace{ab_c.out}] {
            mgeo::pipe::run_ablate(rc, ws, ab_axis);
            std::printf("ablation written to %s/ablation-%s.json\n", ws.eval_dir().c_str(),
                        ab_axis.c_str());
        };
    });

    // run-all
    auto* all = app.add_subcommand("run-all", "Run every stage in order on one workspace");
    Common all_c;
    add_common(all, all_c);
    all->callback([&] {
        mgeo::cfg::RunConfig rc = build_config(all_c, all);
        action = [rc, ws = mgeo::pipe::Workspace{all_c.out}] {
            mgeo::pipe::run_all(rc, ws);
            std::printf("pipeline complete; metrics report: %s\n", ws.report_path().c_str());
        };
    });

    (void)common;
    // Subcommand callbacks run inside parse(); they only assemble `action`,
    // so anything thrown there is a usage/config problem (exit 2). The heavy
    // lifting happens afterwards and maps to exit 1 on failure.
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        // CLI11 maps --help to 0; anything else is a usage problem.
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const mgeo::cfg::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    try {
        if (action) action();
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return exit_code;
}
