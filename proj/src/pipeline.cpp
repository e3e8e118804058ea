#include "mgeo/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "mgeo/evalkit.hpp"
#include "mgeo/genbench.hpp"
#include "mgeo/nn/checkpoint.hpp"
#include "mgeo/rng.hpp"
#include "mgeo/spatial.hpp"

namespace mgeo::pipe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string FinetuneVariant::name() const {
    std::string n = head == mm::Head::BI ? "bi" : "cross";
    if (text_only) return n + "-text";
    if (no_query_gc) return n + "-noqgc";
    return n;
}

FinetuneVariant variant_from_name(const std::string& name) {
    for (const FinetuneVariant& v : standard_variants())
        if (v.name() == name) return v;
    throw PipelineError("unknown fine-tune variant: " + name +
                        " (expected bi, bi-text, bi-noqgc, cross or cross-text)");
}

const std::vector<FinetuneVariant>& standard_variants() {
    static const std::vector<FinetuneVariant> v = {
        {mm::Head::BI, false, false},  {mm::Head::BI, true, false}, {mm::Head::BI, false, true},
        {mm::Head::CROSS, false, false}, {mm::Head::CROSS, true, false},
    };
    return v;
}

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw PipelineError("cannot create directory " + dir + ": " + ec.message());
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PipelineError("cannot read file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write file: " + path);
    out << content;
    if (!out) throw PipelineError("failed writing file: " + path);
}

void require_artifact(const std::string& path, const std::string& hint) {
    if (!fs::exists(path))
        throw PipelineError("missing upstream artifact: " + path + " (" + hint + ")");
}

// One writer per stage directory. Holding the file open is not required; its
// existence is the lock. Removed on scope exit.
class DirLock {
public:
    explicit DirLock(const std::string& dir) : path_(dir + "/.lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw PipelineError("another writer holds the lock: " + path_ +
                                " (remove it if the previous run crashed)");
        std::string pid = std::to_string(::getpid()) + "\n";
        ssize_t ignored = ::write(fd_, pid.data(), pid.size());
        (void)ignored;
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

std::string hex64(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string gc_fingerprint(const gc::GcConfig& c) {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "gc k=%d grid_n=%d bounds=%.17g,%.17g,%.17g,%.17g n_max=%d radius=%.17g "
                  "line_eps=%.17g id_vocab=%d",
                  c.k, c.grid_n, c.map_bounds.left, c.map_bounds.bottom, c.map_bounds.right,
                  c.map_bounds.top, c.n_max, c.radius, c.line_eps, c.id_vocab);
    return buf;
}

spatial::Rect resolve_map_bounds(const CorpusBundle& bundle) {
    double l = std::numeric_limits<double>::infinity(), b = l;
    double r = -l, t = -l;
    auto fold = [&](const GeoPoint& p) {
        l = std::min(l, p.lng);
        r = std::max(r, p.lng);
        b = std::min(b, p.lat);
        t = std::max(t, p.lat);
    };
    for (const auto& o : bundle.objects)
        for (const auto& v : o.vertices) fold(v);
    for (const auto& p : bundle.pois) fold(p.location);
    for (const auto& q : bundle.queries)
        if (q.location) fold(*q.location);
    if (!(r > l) || !(t > b)) throw PipelineError("corpus too degenerate for map bounds");
    double pw = 0.01 * (r - l), ph = 0.01 * (t - b);
    return {l - pw, b - ph, r + pw, t + ph};
}

// Stages downstream of extraction adopt the resolved map bounds from the
// workspace snapshot when the caller's config still has the unset default.
cfg::RunConfig resolved_config(cfg::RunConfig rc, const Workspace& ws) {
    if (rc.gc.map_bounds.width() > 0.0 && rc.gc.map_bounds.height() > 0.0) return rc;
    if (fs::exists(ws.config_path())) {
        cfg::RunConfig disk = cfg::load_runconfig(ws.config_path());
        rc.gc.map_bounds = disk.gc.map_bounds;
    }
    return rc;
}

std::map<std::string, std::string> stage_meta(const cfg::RunConfig& rc, const std::string& stage) {
    return {{"config_hash", cfg::config_hash(rc)},
            {"dtype", "float64"},
            {"seed", std::to_string(rc.seed)},
            {"stage", stage}};
}

geoenc::GeoEncoderConfig geo_config(const cfg::RunConfig& rc) {
    return {rc.gc, rc.geo_trunk};
}

CorpusBundle load_bundle(const Workspace& ws) {
    CorpusPaths paths = CorpusPaths::in_dir(ws.corpus_dir());
    require_artifact(paths.objects, "run gen-bench first");
    return load_corpus(paths);
}

text::Tokenizer load_vocab(const Workspace& ws) {
    require_artifact(ws.vocab_path(), "run gen-bench first");
    return text::Tokenizer::load(ws.vocab_path());
}

// Everything the fine-tuning and evaluation stages share: the corpus, token
// ids, and the frozen geographic states per entity.
struct Context {
    CorpusBundle bundle;
    std::optional<text::Tokenizer> vocab;
    std::unordered_map<std::string, std::vector<int>> query_tokens, poi_tokens;
    std::unordered_map<std::string, nn::Mat> query_states, poi_states;  // frozen, n x hidden

    const nn::Mat* query_gc(const std::string& id) const {
        auto it = query_states.find(id);
        return it == query_states.end() ? nullptr : &it->second;
    }
    const nn::Mat* poi_gc(const std::string& id) const {
        auto it = poi_states.find(id);
        return it == poi_states.end() ? nullptr : &it->second;
    }
};

nn::Mat frozen_states(geoenc::GeoEncoder& frozen, const gc::GCRecord& rec) {
    std::vector<geoenc::ObjectCodes> codes = geoenc::codes_from_record(rec);
    if (codes.empty()) return nn::Mat(0, frozen.config().trunk.hidden);
    nn::Mat all = frozen.encode_values(codes);
    return all.bottomRows(all.rows() - 1);
}

// need_gc: text-only paths skip the geographic caches (and the checkpoint
// they would need).
Context load_context(const cfg::RunConfig& rc, const Workspace& ws, bool need_gc) {
    Context ctx;
    ctx.bundle = load_bundle(ws);
    ctx.vocab = load_vocab(ws);
    for (const auto& q : ctx.bundle.queries) ctx.query_tokens[q.id] = ctx.vocab->encode(q.text);
    for (const auto& p : ctx.bundle.pois) ctx.poi_tokens[p.id] = ctx.vocab->encode(p.text);
    if (!need_gc) return ctx;

    require_artifact(ws.poi_gc_path(), "run extract-gc first");
    require_artifact(ws.query_gc_path(), "run extract-gc first");
    require_artifact(ws.geo_ckpt_path(), "run pretrain-geo first");
    geoenc::GeoEncoder frozen(geo_config(rc), rc.seed);
    nn::load_checkpoint(frozen.params(), ws.geo_ckpt_path());
    gc::GcCache pois = gc::load_gc_cache(ws.poi_gc_path());
    gc::GcCache queries = gc::load_gc_cache(ws.query_gc_path());
    for (const auto& p : ctx.bundle.pois) {
        auto it = pois.records.find(p.id);
        if (it == pois.records.end())
            throw PipelineError("GC cache is missing POI " + p.id + " (re-run extract-gc)");
        ctx.poi_states[p.id] = frozen_states(frozen, it->second);
    }
    for (const auto& q : ctx.bundle.queries) {
        auto it = queries.records.find(q.id);
        if (it != queries.records.end()) ctx.query_states[q.id] = frozen_states(frozen, it->second);
    }
    return ctx;
}

mm::InteractionConfig interaction_config(const cfg::RunConfig& rc, const Context& ctx) {
    mm::InteractionConfig icfg;
    icfg.text_vocab = ctx.vocab->vocab_size();
    icfg.trunk = rc.mm_trunk;
    icfg.geo = geo_config(rc);
    icfg.validate();
    return icfg;
}

mm::InteractionModel load_variant_model(const cfg::RunConfig& rc, const Workspace& ws,
                                        const Context& ctx, const FinetuneVariant& v) {
    require_artifact(ws.ft_ckpt_path(v.name()),
                     "run finetune --variant " + v.name() + " first");
    mm::InteractionModel model(interaction_config(rc, ctx), rc.seed);
    nn::load_checkpoint(model.params(), ws.ft_ckpt_path(v.name()));
    return model;
}

Eigen::RowVectorXd cls_values(mm::InteractionModel& model, const std::vector<int>& body,
                              mm::Role role, const nn::Mat* gc) {
    nn::Tape tape;
    int node = model.tower_cls(tape, body, role, gc);
    return tape.val(node).row(0);
}

double cosine_sim(const Eigen::RowVectorXd& u, const Eigen::RowVectorXd& v) {
    double cu = std::max(u.norm(), 1e-12), cv = std::max(v.norm(), 1e-12);
    return u.dot(v) / (cu * cv);
}

// CLS vectors of every POI tower under one variant's GC policy.
std::unordered_map<std::string, Eigen::RowVectorXd> poi_cls_cache(mm::InteractionModel& model,
                                                                  const Context& ctx,
                                                                  const FinetuneVariant& v) {
    std::unordered_map<std::string, Eigen::RowVectorXd> cache;
    for (const auto& p : ctx.bundle.pois)
        cache[p.id] = cls_values(model, ctx.poi_tokens.at(p.id), mm::Role::POI,
                                 v.text_only ? nullptr : ctx.poi_gc(p.id));
    return cache;
}

eval::CandidateScorer make_scorer(mm::InteractionModel& model, const Context& ctx,
                                  const FinetuneVariant& v,
                                  const std::unordered_map<std::string, Eigen::RowVectorXd>* poi_cls) {
    if (v.head == mm::Head::BI) {
        return [&model, &ctx, v, poi_cls](const Query& q, const std::vector<std::string>& pois) {
            const nn::Mat* qgc =
                (v.text_only || v.no_query_gc) ? nullptr : ctx.query_gc(q.id);
            Eigen::RowVectorXd qv =
                cls_values(model, ctx.query_tokens.at(q.id), mm::Role::QUERY, qgc);
            std::vector<double> scores;
            scores.reserve(pois.size());
            for (const auto& pid : pois) scores.push_back(cosine_sim(qv, poi_cls->at(pid)));
            return scores;
        };
    }
    return [&model, &ctx, v](const Query& q, const std::vector<std::string>& pois) {
        const nn::Mat* qgc = (v.text_only || v.no_query_gc) ? nullptr : ctx.query_gc(q.id);
        const auto& qt = ctx.query_tokens.at(q.id);
        std::vector<double> scores;
        scores.reserve(pois.size());
        for (const auto& pid : pois)
            scores.push_back(model.cross_score(qt, qgc, ctx.poi_tokens.at(pid),
                                               v.text_only ? nullptr : ctx.poi_gc(pid)));
        return scores;
    };
}

json metrics_json(const std::vector<eval::RankingResult>& results, const CorpusBundle& bundle) {
    json out;
    out["queries"] = results.size();
    out["global"] = eval::standard_metrics(results);
    json slices = json::object();
    for (const auto& s : eval::slice_by_query_type(results, bundle))
        slices[s.slice] = json{{"metrics", s.metrics}, {"queries", s.queries}};
    out["slices"] = slices;
    return out;
}

void write_finetune_outputs(const std::string& dir, const mm::FinetuneResult& res) {
    std::string trace;
    char line[128];
    for (const auto& [step, loss] : res.loss_trace) {
        std::snprintf(line, sizeof(line), "%d\t%.17g\n", step, loss);
        trace += line;
    }
    write_file(dir + "/trace.tsv", trace);
    std::string dev;
    for (size_t e = 0; e < res.dev_recall1_per_epoch.size(); ++e) {
        std::snprintf(line, sizeof(line), "%zu\t%.17g\n", e, res.dev_recall1_per_epoch[e]);
        dev += line;
    }
    write_file(dir + "/dev.tsv", dev);
}

}  // namespace

void run_gen(const cfg::RunConfig& rc, const Workspace& ws) {
    rc.validate();
    ensure_dir(ws.corpus_dir());
    DirLock lock(ws.corpus_dir());

    CorpusBundle bundle = gen::generate_benchmark(rc.gen);
    save_corpus(bundle, CorpusPaths::in_dir(ws.corpus_dir()));

    std::vector<std::string> texts;
    texts.reserve(bundle.pois.size() + bundle.queries.size());
    for (const auto& p : bundle.pois) texts.push_back(p.text);
    for (const auto& q : bundle.queries) texts.push_back(q.text);
    text::Tokenizer vocab = text::Tokenizer::build(texts);
    vocab.save(ws.vocab_path());

    json splits = json::object();
    for (const auto& [name, ids] : bundle.splits) splits[name] = ids.size();
    json manifest{{"files", {"objects.jl", "pois.jl", "queries.jl", "splits.jl", "vocab.json"}},
                  {"objects", bundle.objects.size()},
                  {"pois", bundle.pois.size()},
                  {"queries", bundle.queries.size()},
                  {"seed", rc.gen.seed},
                  {"split_sizes", splits},
                  {"vocab_size", vocab.vocab_size()}};
    write_file(ws.corpus_dir() + "/manifest.json", manifest.dump(2) + "\n");

    cfg::save_runconfig(rc, ws.corpus_dir() + "/config.json");
    cfg::save_runconfig(rc, ws.config_path());
}

cfg::RunConfig run_extract_gc(cfg::RunConfig rc, const Workspace& ws, ExtractStats* stats) {
    CorpusBundle bundle = load_bundle(ws);
    if (rc.gc.map_bounds.width() <= 0.0 || rc.gc.map_bounds.height() <= 0.0)
        rc.gc.map_bounds = resolve_map_bounds(bundle);
    rc.gc.validate();

    ensure_dir(ws.gc_dir());
    DirLock lock(ws.gc_dir());

    CorpusPaths paths = CorpusPaths::in_dir(ws.corpus_dir());
    const std::string object_bytes = read_file(paths.objects);
    auto content_hash = [&](const std::string& entity_bytes) {
        uint64_t h = fnv1a64(gc_fingerprint(rc.gc));
        h = fnv1a64(object_bytes, h);
        h = fnv1a64(entity_bytes, h);
        return hex64(h);
    };
    auto cache_current = [](const std::string& path, const std::string& want) {
        if (!fs::exists(path)) return false;
        return gc::load_gc_cache(path).content_hash == want;
    };

    std::optional<spatial::SpatialIndex> index;
    auto ensure_index = [&]() {
        if (!index) {
            spatial::SpatialIndexConfig icfg;
            icfg.line_eps = rc.gc.line_eps;
            index.emplace(bundle.objects, icfg);
        }
    };

    ExtractStats st;
    const std::string poi_hash = content_hash(read_file(paths.pois));
    if (!cache_current(ws.poi_gc_path(), poi_hash)) {
        ensure_index();
        gc::GcCache cache;
        cache.content_hash = poi_hash;
        std::vector<std::string> order;
        for (const auto& p : bundle.pois) {
            cache.records[p.id] = gc::extract_gc(p.location, *index, rc.gc);
            order.push_back(p.id);
        }
        st.poi_records_computed = order.size();
        gc::save_gc_cache(cache, order, ws.poi_gc_path());
    }

    const std::string query_hash = content_hash(read_file(paths.queries));
    if (!cache_current(ws.query_gc_path(), query_hash)) {
        ensure_index();
        gc::GcCache cache;
        cache.content_hash = query_hash;
        std::vector<std::string> order;
        for (const auto& q : bundle.queries) {
            if (!q.location) continue;  // nothing to anchor on
            cache.records[q.id] = gc::extract_gc(*q.location, *index, rc.gc);
            order.push_back(q.id);
        }
        st.query_records_computed = order.size();
        gc::save_gc_cache(cache, order, ws.query_gc_path());
    }
    if (stats) *stats = st;

    cfg::save_runconfig(rc, ws.gc_dir() + "/config.json");
    cfg::save_runconfig(rc, ws.config_path());
    return rc;
}

void run_pretrain_geo(const cfg::RunConfig& rc_in, const Workspace& ws) {
    cfg::RunConfig rc = resolved_config(rc_in, ws);
    require_artifact(ws.poi_gc_path(), "run extract-gc first");
    require_artifact(ws.query_gc_path(), "run extract-gc first");
    CorpusBundle bundle = load_bundle(ws);
    gc::GcCache poi_cache = gc::load_gc_cache(ws.poi_gc_path());
    gc::GcCache query_cache = gc::load_gc_cache(ws.query_gc_path());

    ensure_dir(ws.geo_dir());
    DirLock lock(ws.geo_dir());

    std::vector<gc::GCRecord> records;
    for (const auto& p : bundle.pois) records.push_back(poi_cache.records.at(p.id));
    for (const auto& qid : bundle.split("train")) {
        auto it = query_cache.records.find(qid);
        if (it != query_cache.records.end()) records.push_back(it->second);
    }

    geoenc::GeoEncoder enc(geo_config(rc), rc.seed);
    std::vector<geoenc::TraceRow> trace = geoenc::train_geo_encoder(enc, records, rc.geo_train, rc.seed);
    geoenc::save_trace(trace, ws.geo_dir() + "/trace.tsv");
    nn::save_checkpoint(enc.params(), ws.geo_ckpt_path(), stage_meta(rc, "pretrain-geo"));
    cfg::save_runconfig(rc, ws.geo_dir() + "/config.json");
}

void run_pretrain_mm(const cfg::RunConfig& rc_in, const Workspace& ws) {
    cfg::RunConfig rc = resolved_config(rc_in, ws);
    require_artifact(ws.geo_ckpt_path(), "run pretrain-geo first");
    require_artifact(ws.poi_gc_path(), "run extract-gc first");
    require_artifact(ws.query_gc_path(), "run extract-gc first");
    CorpusBundle bundle = load_bundle(ws);
    text::Tokenizer vocab = load_vocab(ws);
    gc::GcCache poi_cache = gc::load_gc_cache(ws.poi_gc_path());
    gc::GcCache query_cache = gc::load_gc_cache(ws.query_gc_path());

    ensure_dir(ws.mm_dir());
    DirLock lock(ws.mm_dir());

    geoenc::GeoEncoder frozen(geo_config(rc), rc.seed);
    nn::load_checkpoint(frozen.params(), ws.geo_ckpt_path());

    mm::InteractionConfig icfg;
    icfg.text_vocab = vocab.vocab_size();
    icfg.trunk = rc.mm_trunk;
    icfg.geo = geo_config(rc);
    icfg.validate();
    mm::InteractionModel model(icfg, rc.seed);

    std::vector<mm::PretrainExample> corpus;
    for (const auto& p : bundle.pois) {
        mm::PretrainExample ex;
        ex.body_tokens = vocab.encode(p.text);
        ex.codes = geoenc::codes_from_record(poi_cache.records.at(p.id));
        ex.role = mm::Role::POI;
        corpus.push_back(std::move(ex));
    }
    for (const auto& qid : bundle.split("train")) {
        mm::PretrainExample ex;
        ex.body_tokens = vocab.encode(bundle.query(qid).text);
        auto it = query_cache.records.find(qid);
        if (it != query_cache.records.end()) ex.codes = geoenc::codes_from_record(it->second);
        ex.role = mm::Role::QUERY;
        corpus.push_back(std::move(ex));
    }

    std::vector<mm::PretrainTraceRow> trace =
        mm::pretrain_round_robin(model, frozen, corpus, rc.mm_pretrain, rc.seed);
    mm::save_pretrain_trace(trace, ws.mm_dir() + "/trace.tsv");
    nn::save_checkpoint(model.params(), ws.mm_ckpt_path(), stage_meta(rc, "pretrain-mm"));
    cfg::save_runconfig(rc, ws.mm_dir() + "/config.json");
}

mm::FinetuneResult run_finetune(const cfg::RunConfig& rc_in, const Workspace& ws,
                                const FinetuneVariant& v, bool from_scratch) {
    cfg::RunConfig rc = resolved_config(rc_in, ws);
    if (!from_scratch && !fs::exists(ws.mm_ckpt_path()))
        throw PipelineError("missing multi-modal checkpoint: " + ws.mm_ckpt_path() +
                            " (run pretrain-mm first, or pass --from-scratch for the "
                            "no-pretraining baseline)");
    Context ctx = load_context(rc, ws, /*need_gc=*/!v.text_only);

    const std::string dir = ws.ft_dir(v.name());
    ensure_dir(dir);
    DirLock lock(dir);

    mm::InteractionModel model(interaction_config(rc, ctx), rc.seed);
    if (!from_scratch) nn::load_checkpoint(model.params(), ws.mm_ckpt_path());

    mm::FinetuneData data;
    data.train_queries = ctx.bundle.split("train");
    data.dev_queries = ctx.bundle.split("dev");
    data.query = [&ctx](const std::string& id) -> const Query& { return ctx.bundle.query(id); };
    data.query_tokens = [&ctx](const std::string& id) -> const std::vector<int>& {
        return ctx.query_tokens.at(id);
    };
    data.poi_tokens = [&ctx](const std::string& id) -> const std::vector<int>& {
        return ctx.poi_tokens.at(id);
    };
    data.query_gc = [&ctx, v](const std::string& id) -> const nn::Mat* {
        return (v.text_only || v.no_query_gc) ? nullptr : ctx.query_gc(id);
    };
    data.poi_gc = [&ctx, v](const std::string& id) -> const nn::Mat* {
        return v.text_only ? nullptr : ctx.poi_gc(id);
    };

    mm::FinetuneConfig fc = v.head == mm::Head::BI ? rc.ft_bi : rc.ft_cross;
    fc.head = v.head;
    mm::FinetuneResult res = mm::finetune(model, data, fc, rc.seed);

    std::map<std::string, std::string> meta = stage_meta(rc, "finetune-" + v.name());
    meta["best_epoch"] = std::to_string(res.best_epoch);
    meta["best_dev_recall1"] = std::to_string(res.best_dev_recall1);
    meta["from_scratch"] = from_scratch ? "1" : "0";
    nn::save_checkpoint(model.params(), ws.ft_ckpt_path(v.name()), meta);
    write_finetune_outputs(dir, res);
    cfg::save_runconfig(rc, dir + "/config.json");
    return res;
}

void run_eval(const cfg::RunConfig& rc_in, const Workspace& ws) {
    cfg::RunConfig rc = resolved_config(rc_in, ws);
    Context ctx = load_context(rc, ws, /*need_gc=*/true);

    ensure_dir(ws.eval_dir());
    DirLock lock(ws.eval_dir());

    json models = json::object();
    for (const FinetuneVariant& v : standard_variants()) {
        mm::InteractionModel model = load_variant_model(rc, ws, ctx, v);
        std::unordered_map<std::string, Eigen::RowVectorXd> poi_cls;
        if (v.head == mm::Head::BI) poi_cls = poi_cls_cache(model, ctx, v);
        eval::CandidateScorer scorer = make_scorer(model, ctx, v, &poi_cls);

        json per_split = json::object();
        for (const char* split : {"dev", "test"}) {
            std::vector<eval::RankingResult> results =
                eval::run_ranking(ctx.bundle, ctx.bundle.split(split), scorer);
            per_split[split] = metrics_json(results, ctx.bundle);
        }
        models[v.name()] = per_split;
    }

    json report{{"config_hash", cfg::config_hash(rc)},
                {"models", models},
                {"seed", rc.seed}};
    write_file(ws.report_path(), report.dump(2) + "\n");
    cfg::save_runconfig(rc, ws.eval_dir() + "/config.json");
}

void run_ablate(const cfg::RunConfig& rc_in, const Workspace& ws, const std::string& axis) {
    cfg::RunConfig rc = resolved_config(rc_in, ws);
    if (axis != "gc-percent" && axis != "truncation" && axis != "query-type")
        throw PipelineError("unknown ablation axis: " + axis +
                            " (expected gc-percent, truncation or query-type)");
    Context ctx = load_context(rc, ws, /*need_gc=*/true);
    FinetuneVariant v;  // full-GC bi-encoder carries every ablation
    mm::InteractionModel model = load_variant_model(rc, ws, ctx, v);
    std::unordered_map<std::string, Eigen::RowVectorXd> poi_cls = poi_cls_cache(model, ctx, v);

    ensure_dir(ws.eval_dir());
    const std::vector<std::string>& ids = ctx.bundle.split("test");
    json points = json::array();

    if (axis == "gc-percent") {
        for (int percent : {0, 25, 50, 75, 100}) {
            std::vector<std::string> kept =
                eval::queries_keeping_gc(ids, percent / 100.0, rc.seed);
            std::unordered_set<std::string> keep(kept.begin(), kept.end());
            eval::CandidateScorer scorer = [&](const Query& q,
                                               const std::vector<std::string>& pois) {
                const nn::Mat* qgc = keep.count(q.id) ? ctx.query_gc(q.id) : nullptr;
                Eigen::RowVectorXd qv =
                    cls_values(model, ctx.query_tokens.at(q.id), mm::Role::QUERY, qgc);
                std::vector<double> scores;
                scores.reserve(pois.size());
                for (const auto& pid : pois) scores.push_back(cosine_sim(qv, poi_cls.at(pid)));
                return scores;
            };
            std::vector<eval::RankingResult> results = eval::run_ranking(ctx.bundle, ids, scorer);
            points.push_back(json{{"metrics", eval::standard_metrics(results)},
                                  {"percent", percent},
                                  {"queries", results.size()}});
        }
    } else if (axis == "truncation") {
        for (double drop : {0.0, 0.25, 0.5}) {
            eval::CandidateScorer scorer = [&](const Query& q,
                                               const std::vector<std::string>& pois) {
                std::vector<int> toks = eval::truncate_prefix(ctx.query_tokens.at(q.id), drop);
                Eigen::RowVectorXd qv =
                    cls_values(model, toks, mm::Role::QUERY, ctx.query_gc(q.id));
                std::vector<double> scores;
                scores.reserve(pois.size());
                for (const auto& pid : pois) scores.push_back(cosine_sim(qv, poi_cls.at(pid)));
                return scores;
            };
            std::vector<eval::RankingResult> results = eval::run_ranking(ctx.bundle, ids, scorer);
            points.push_back(json{{"drop_fraction", drop},
                                  {"metrics", eval::standard_metrics(results)},
                                  {"queries", results.size()}});
        }
    } else {
        eval::CandidateScorer scorer = make_scorer(model, ctx, v, &poi_cls);
        std::vector<eval::RankingResult> results = eval::run_ranking(ctx.bundle, ids, scorer);
        points.push_back(json{{"metrics", eval::standard_metrics(results)},
                              {"queries", results.size()},
                              {"slice", "GLOBAL"}});
        for (const auto& s : eval::slice_by_query_type(results, ctx.bundle))
            points.push_back(
                json{{"metrics", s.metrics}, {"queries", s.queries}, {"slice", s.slice}});
    }

    json out{{"axis", axis},
             {"config_hash", cfg::config_hash(rc)},
             {"model", v.name()},
             {"points", points},
             {"seed", rc.seed},
             {"split", "test"}};
    write_file(ws.eval_dir() + "/ablation-" + axis + ".json", out.dump(2) + "\n");
}

namespace {

void write_scored_tsv(const std::string& path,
                      const std::vector<std::pair<std::string,
                                                  std::vector<std::pair<std::string, double>>>>& rows) {
    std::string out;
    char line[256];
    for (const auto& [qid, scored] : rows) {
        for (const auto& [pid, score] : scored) {
            std::snprintf(line, sizeof(line), "%s\t%s\t%.17g\n", qid.c_str(), pid.c_str(), score);
            out += line;
        }
    }
    write_file(path, out);
}

// Sort rule shared with the ranking metrics: score descending, id ascending.
void sort_scored(std::vector<std::pair<std::string, double>>& scored) {
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
}

}  // namespace

void run_rank(const cfg::RunConfig& rc_in, const Workspace& ws, const std::string& variant,
              const std::string& split, const std::string& out_prefix) {
    cfg::RunConfig rc = resolved_config(rc_in, ws);
    FinetuneVariant v = variant_from_name(variant);
    Context ctx = load_context(rc, ws, /*need_gc=*/true);
    mm::InteractionModel model = load_variant_model(rc, ws, ctx, v);
    std::unordered_map<std::string, Eigen::RowVectorXd> poi_cls;
    if (v.head == mm::Head::BI) poi_cls = poi_cls_cache(model, ctx, v);
    eval::CandidateScorer scorer = make_scorer(model, ctx, v, &poi_cls);

    const std::vector<std::string>& ids = ctx.bundle.split(split);
    std::vector<eval::RankingResult> results;
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>> rows;
    for (const auto& qid : ids) {
        const Query& q = ctx.bundle.query(qid);
        if (q.candidates.empty()) continue;
        std::vector<double> scores = scorer(q, q.candidates);
        std::vector<std::pair<std::string, double>> scored;
        for (size_t i = 0; i < q.candidates.size(); ++i)
            scored.emplace_back(q.candidates[i], scores[i]);
        results.push_back(eval::rank_candidates(q.id, q.gold, scored));
        sort_scored(scored);
        rows.emplace_back(qid, std::move(scored));
    }
    write_scored_tsv(out_prefix + ".tsv", rows);
    json out{{"config_hash", cfg::config_hash(rc)},
             {"metrics", metrics_json(results, ctx.bundle)},
             {"model", v.name()},
             {"seed", rc.seed},
             {"split", split}};
    write_file(out_prefix + ".json", out.dump(2) + "\n");
}

void run_retrieve(const cfg::RunConfig& rc_in, const Workspace& ws, const std::string& variant,
                  const std::string& split, int k_max, const std::string& out_prefix) {
    cfg::RunConfig rc = resolved_config(rc_in, ws);
    FinetuneVariant v = variant_from_name(variant);
    if (v.head != mm::Head::BI)
        throw PipelineError("retrieval requires a bi-encoder variant, got " + variant);
    if (k_max < 1) throw PipelineError("k_max must be at least 1");
    Context ctx = load_context(rc, ws, /*need_gc=*/true);
    mm::InteractionModel model = load_variant_model(rc, ws, ctx, v);
    std::unordered_map<std::string, Eigen::RowVectorXd> poi_cls = poi_cls_cache(model, ctx, v);

    std::vector<std::string> pool;
    pool.reserve(ctx.bundle.pois.size());
    for (const auto& p : ctx.bundle.pois) pool.push_back(p.id);

    const std::vector<std::string>& ids = ctx.bundle.split(split);
    std::vector<eval::RankingResult> results = eval::run_retrieval(
        ctx.bundle, ids,
        [&](const Query& q) {
            const nn::Mat* qgc = (v.text_only || v.no_query_gc) ? nullptr : ctx.query_gc(q.id);
            return cls_values(model, ctx.query_tokens.at(q.id), mm::Role::QUERY, qgc);
        },
        pool, [&](const std::string& pid) { return poi_cls.at(pid); }, k_max);

    std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>> rows;
    for (const auto& qid : ids) {
        const Query& q = ctx.bundle.query(qid);
        const nn::Mat* qgc = (v.text_only || v.no_query_gc) ? nullptr : ctx.query_gc(q.id);
        Eigen::RowVectorXd qv = cls_values(model, ctx.query_tokens.at(q.id), mm::Role::QUERY, qgc);
        std::vector<std::pair<std::string, double>> scored;
        scored.reserve(pool.size());
        for (const auto& pid : pool) scored.emplace_back(pid, cosine_sim(qv, poi_cls.at(pid)));
        sort_scored(scored);
        if (static_cast<int>(scored.size()) > k_max) scored.resize(static_cast<size_t>(k_max));
        rows.emplace_back(qid, std::move(scored));
    }
    write_scored_tsv(out_prefix + ".tsv", rows);
    json out{{"config_hash", cfg::config_hash(rc)},
             {"k_max", k_max},
             {"metrics", metrics_json(results, ctx.bundle)},
             {"model", v.name()},
             {"pool", pool.size()},
             {"seed", rc.seed},
             {"split", split}};
    write_file(out_prefix + ".json", out.dump(2) + "\n");
}

void run_all(const cfg::RunConfig& rc, const Workspace& ws) {
    run_gen(rc, ws);
    cfg::RunConfig resolved = run_extract_gc(rc, ws);
    run_pretrain_geo(resolved, ws);
    run_pretrain_mm(resolved, ws);
    for (const FinetuneVariant& v : standard_variants()) run_finetune(resolved, ws, v, false);
    run_eval(resolved, ws);
    run_ablate(resolved, ws, "gc-percent");
}

}  // namespace mgeo::pipe
