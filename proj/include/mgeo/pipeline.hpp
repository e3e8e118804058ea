#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mgeo/interaction.hpp"
#include "mgeo/runconfig.hpp"

namespace mgeo::pipe {

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Directory layout under one run root. Every stage owns one directory,
// guarded by a lock file while it writes, and leaves a config snapshot there.
struct Workspace {
    std::string root;

    std::string corpus_dir() const { return root + "/corpus"; }
    std::string gc_dir() const { return root + "/gc"; }
    std::string geo_dir() const { return root + "/geo"; }
    std::string mm_dir() const { return root + "/mm"; }
    std::string ft_dir(const std::string& variant) const { return root + "/ft-" + variant; }
    std::string eval_dir() const { return root + "/eval"; }
    std::string config_path() const { return root + "/config.json"; }

    std::string vocab_path() const { return corpus_dir() + "/vocab.json"; }
    std::string poi_gc_path() const { return gc_dir() + "/pois.jl"; }
    std::string query_gc_path() const { return gc_dir() + "/queries.jl"; }
    std::string geo_ckpt_path() const { return geo_dir() + "/geo.ckpt"; }
    std::string mm_ckpt_path() const { return mm_dir() + "/mm.ckpt"; }
    std::string ft_ckpt_path(const std::string& variant) const {
        return ft_dir(variant) + "/model.ckpt";
    }
    std::string report_path() const { return eval_dir() + "/report.json"; }
};

// One fine-tuning configuration of the interaction model. text_only drops
// both GC segments; no_query_gc drops only the query side.
struct FinetuneVariant {
    mm::Head head = mm::Head::BI;
    bool text_only = false;
    bool no_query_gc = false;

    std::string name() const;
};

FinetuneVariant variant_from_name(const std::string& name);
// bi, bi-text, bi-noqgc, cross, cross-text: the model rows of the report.
const std::vector<FinetuneVariant>& standard_variants();

struct ExtractStats {
    size_t poi_records_computed = 0;
    size_t query_records_computed = 0;
};

void run_gen(const cfg::RunConfig& rc, const Workspace& ws);
// Resolves map_bounds from the corpus when unset; skips caches whose content
// hash is already current. Returns the resolved config (also written to the
// workspace root).
cfg::RunConfig run_extract_gc(cfg::RunConfig rc, const Workspace& ws, ExtractStats* stats = nullptr);
void run_pretrain_geo(const cfg::RunConfig& rc, const Workspace& ws);
void run_pretrain_mm(const cfg::RunConfig& rc, const Workspace& ws);
mm::FinetuneResult run_finetune(const cfg::RunConfig& rc, const Workspace& ws,
                                const FinetuneVariant& v, bool from_scratch = false);
// Scores dev and test for every standard variant and writes the metrics
// report (global + per-query-type Recall@k / MRR@k, seed, config hash).
void run_eval(const cfg::RunConfig& rc, const Workspace& ws);
// axis: gc-percent | truncation | query-type. Writes eval/ablation-<axis>.json.
void run_ablate(const cfg::RunConfig& rc, const Workspace& ws, const std::string& axis);

// Candidate ranking / full-pool retrieval dumps: one "query\tpoi\tscore" line
// per scored pair, score descending per query, plus a metrics JSON.
void run_rank(const cfg::RunConfig& rc, const Workspace& ws, const std::string& variant,
              const std::string& split, const std::string& out_prefix);
void run_retrieve(const cfg::RunConfig& rc, const Workspace& ws, const std::string& variant,
                  const std::string& split, int k_max, const std::string& out_prefix);

// gen -> extract-gc -> pretrain-geo -> pretrain-mm -> all five fine-tunes ->
// eval -> gc-percent ablation.
void run_all(const cfg::RunConfig& rc, const Workspace& ws);

}  // namespace mgeo::pipe
