#include "mgeo/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

namespace mgeo::mm {

using text::Tokenizer;

const char* pretrain_task_name(PretrainTask t) {
    switch (t) {
        case PretrainTask::MLM_SINGLE: return "mlm_single";
        case PretrainTask::MLM_MULTI: return "mlm_multi";
        case PretrainTask::MGM_MULTI: return "mgm_multi";
    }
    throw nn::NnError("unknown pre-training task");
}

const char* head_name(Head h) {
    return h == Head::BI ? "bi" : "cross";
}

void InteractionConfig::validate() const {
    if (text_vocab <= Tokenizer::kFirstRegular)
        throw nn::NnError("interaction model needs a non-empty text vocabulary");
    trunk.validate();
    geo.validate();
    if (trunk.hidden != geo.trunk.hidden)
        throw nn::NnError("interaction and geographic encoder widths must match");
}

InteractionModel::InteractionModel(InteractionConfig cfg, uint64_t seed)
    : cfg_(std::move(cfg)), ps_(seed) {
    cfg_.validate();
    const int h = cfg_.trunk.hidden;
    ps_.add("mm.emb.word", {cfg_.text_vocab, h});
    ps_.add("mm.emb.pos", {cfg_.trunk.max_seq, h});
    ps_.add("mm.emb.seg", {2, h});
    ps_.add("mm.emb_ln.gamma", {1, h}, nn::Init::ONES);
    ps_.add("mm.emb_ln.beta", {1, h}, nn::Init::ZEROS);
    ps_.add("mm.disc", {2, h});
    nn::add_transformer_params(ps_, "mm.trunk", cfg_.trunk);
    ps_.add("mm.mlm.w", {h, cfg_.text_vocab});
    ps_.add("mm.mlm.b", {1, cfg_.text_vocab}, nn::Init::ZEROS);
    for (int f = 0; f < geoenc::FAM_COUNT; ++f) {
        std::string fam = geoenc::family_name(f);
        ps_.add("mm.mgm." + fam + ".w", {h, cfg_.geo.family_vocab(f)});
        ps_.add("mm.mgm." + fam + ".b", {1, cfg_.geo.family_vocab(f)}, nn::Init::ZEROS);
    }
    ps_.add("mm.sim.w1", {h, h});
    ps_.add("mm.sim.b1", {1, h}, nn::Init::ZEROS);
    ps_.add("mm.sim.w2", {h, 1});
    ps_.add("mm.sim.b2", {1, 1}, nn::Init::ZEROS);
}

void InteractionModel::tokens_single(const std::vector<int>& body, std::vector<int>& tokens,
                                     std::vector<int>& segments) {
    tokens.clear();
    segments.clear();
    tokens.push_back(Tokenizer::kCls);
    tokens.insert(tokens.end(), body.begin(), body.end());
    tokens.push_back(Tokenizer::kSep);
    segments.assign(tokens.size(), 0);
}

void InteractionModel::tokens_pair(const std::vector<int>& q_body, const std::vector<int>& p_body,
                                   std::vector<int>& tokens, std::vector<int>& segments) {
    tokens.clear();
    segments.clear();
    tokens.push_back(Tokenizer::kCls);
    tokens.insert(tokens.end(), q_body.begin(), q_body.end());
    tokens.push_back(Tokenizer::kSep);
    segments.assign(tokens.size(), 0);
    tokens.insert(tokens.end(), p_body.begin(), p_body.end());
    tokens.push_back(Tokenizer::kSep);
    segments.resize(tokens.size(), 1);
}

int InteractionModel::forward(nn::Tape& tape, const std::vector<int>& tokens,
                              const std::vector<int>& segments,
                              const std::vector<GcSegment>& gc) {
    if (tokens.empty() || tokens.size() != segments.size())
        throw nn::NnError("forward: tokens and segments must be non-empty and aligned");
    Eigen::Index total = static_cast<Eigen::Index>(tokens.size());
    for (const auto& seg : gc) {
        if (seg.values.cols() != cfg_.trunk.hidden)
            throw nn::NnError("forward: GC segment width mismatch");
        total += seg.values.rows();
    }
    if (total > cfg_.trunk.max_seq)
        throw nn::NnError("forward: sequence overflow (" + std::to_string(total) + " > " +
                          std::to_string(cfg_.trunk.max_seq) + ")");

    std::vector<int> positions(tokens.size());
    for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
    int x = tape.add(tape.add(tape.gather(ps_, "mm.emb.word", tokens),
                              tape.gather(ps_, "mm.emb.pos", positions)),
                     tape.gather(ps_, "mm.emb.seg", segments));
    std::vector<int> parts{x};
    for (const auto& seg : gc) {
        if (seg.values.rows() == 0) continue;
        int v = tape.constant(seg.values);
        parts.push_back(
            tape.add_rowvec(v, tape.gather(ps_, "mm.disc", {static_cast<int>(seg.role)})));
    }
    int seq = parts.size() == 1 ? parts[0] : tape.concat_rows(parts);
    int normed = tape.layer_norm(seq, tape.param(ps_, "mm.emb_ln.gamma"),
                                 tape.param(ps_, "mm.emb_ln.beta"));
    return nn::transformer_encode(tape, ps_, "mm.trunk", cfg_.trunk, normed);
}

int InteractionModel::tower_cls(nn::Tape& tape, const std::vector<int>& body, Role role,
                                const nn::Mat* gc) {
    std::vector<int> tokens, segments;
    tokens_single(body, tokens, segments);
    std::vector<GcSegment> segs;
    if (gc != nullptr && gc->rows() > 0) segs.push_back({role, *gc});
    int out = forward(tape, tokens, segments, segs);
    return tape.slice_rows(out, 0, 1);
}

int InteractionModel::bi_score_node(nn::Tape& tape, const std::vector<int>& q_body,
                                    const nn::Mat* q_gc, const std::vector<int>& p_body,
                                    const nn::Mat* p_gc) {
    int q = tower_cls(tape, q_body, Role::QUERY, q_gc);
    int p = tower_cls(tape, p_body, Role::POI, p_gc);
    return tape.cosine(q, p);
}

double InteractionModel::bi_score(const std::vector<int>& q_body, const nn::Mat* q_gc,
                                  const std::vector<int>& p_body, const nn::Mat* p_gc) {
    nn::Tape tape;
    return tape.val(bi_score_node(tape, q_body, q_gc, p_body, p_gc))(0, 0);
}

int InteractionModel::cross_score_node(nn::Tape& tape, const std::vector<int>& q_body,
                                       const nn::Mat* q_gc, const std::vector<int>& p_body,
                                       const nn::Mat* p_gc) {
    std::vector<int> tokens, segments;
    tokens_pair(q_body, p_body, tokens, segments);
    std::vector<GcSegment> segs;
    if (q_gc != nullptr && q_gc->rows() > 0) segs.push_back({Role::QUERY, *q_gc});
    if (p_gc != nullptr && p_gc->rows() > 0) segs.push_back({Role::POI, *p_gc});
    int out = forward(tape, tokens, segments, segs);
    int cls = tape.slice_rows(out, 0, 1);
    int h1 = tape.gelu(tape.add_rowvec(tape.matmul(cls, tape.param(ps_, "mm.sim.w1")),
                                       tape.param(ps_, "mm.sim.b1")));
    return tape.add_rowvec(tape.matmul(h1, tape.param(ps_, "mm.sim.w2")),
                           tape.param(ps_, "mm.sim.b2"));
}

double InteractionModel::cross_score(const std::vector<int>& q_body, const nn::Mat* q_gc,
                                     const std::vector<int>& p_body, const nn::Mat* p_gc) {
    nn::Tape tape;
    return tape.val(cross_score_node(tape, q_body, q_gc, p_body, p_gc))(0, 0);
}

TextMaskPlan plan_text_mask(const std::vector<int>& tokens, int vocab_size, double mask_prob,
                            Rng& rng) {
    TextMaskPlan plan;
    plan.masked_tokens = tokens;
    const int regular = vocab_size - Tokenizer::kFirstRegular;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < Tokenizer::kFirstRegular) continue;
        if (!rng.bernoulli(mask_prob)) continue;
        plan.positions.push_back(static_cast<int>(i));
        plan.targets.push_back(tokens[i]);
        double mode = rng.uniform();
        if (mode < 0.8) {
            plan.masked_tokens[i] = Tokenizer::kMask;
            ++plan.n_mask;
        } else if (mode < 0.9) {
            plan.masked_tokens[i] =
                Tokenizer::kFirstRegular + static_cast<int>(rng.below(static_cast<uint64_t>(regular)));
            ++plan.n_random;
        } else {
            ++plan.n_keep;
        }
    }
    return plan;
}

namespace {

nn::Mat scalar_mat(double v) {
    nn::Mat m(1, 1);
    m(0, 0) = v;
    return m;
}

// Object states of the frozen encoder (GC-token row dropped).
nn::Mat frozen_object_states(geoenc::GeoEncoder& frozen,
                             const std::vector<geoenc::ObjectCodes>& codes) {
    if (codes.empty()) return nn::Mat(0, frozen.config().trunk.hidden);
    nn::Mat all = frozen.encode_values(codes);
    return all.bottomRows(all.rows() - 1);
}

}  // namespace

int pretrain_loss(nn::Tape& tape, InteractionModel& model, geoenc::GeoEncoder& frozen,
                  const std::vector<const PretrainExample*>& batch, PretrainTask task,
                  double mask_prob, Rng& rng, PretrainStats* stats) {
    auto& ps = model.params();
    std::vector<int> pred_rows;   // 1 x hidden states to classify
    std::vector<int> mlm_targets;
    std::vector<const geoenc::ObjectCodes*> mgm_targets;

    for (const PretrainExample* ex : batch) {
        std::vector<int> tokens, segments;
        InteractionModel::tokens_single(ex->body_tokens, tokens, segments);
        if (task == PretrainTask::MLM_SINGLE || task == PretrainTask::MLM_MULTI) {
            TextMaskPlan plan =
                plan_text_mask(tokens, model.config().text_vocab, mask_prob, rng);
            std::vector<GcSegment> segs;
            if (task == PretrainTask::MLM_MULTI && !ex->codes.empty())
                segs.push_back({ex->role, frozen_object_states(frozen, ex->codes)});
            int out = model.forward(tape, plan.masked_tokens, segments, segs);
            for (size_t s = 0; s < plan.positions.size(); ++s) {
                pred_rows.push_back(tape.slice_rows(out, plan.positions[s], 1));
                mlm_targets.push_back(plan.targets[s]);
            }
            if (stats) {
                stats->selected += static_cast<int>(plan.positions.size());
                stats->n_mask += plan.n_mask;
                stats->n_random += plan.n_random;
                stats->n_keep += plan.n_keep;
            }
        } else if (task == PretrainTask::MGM_MULTI) {
            geoenc::MaskPlan plan =
                geoenc::plan_object_mask(ex->codes, frozen.config(), mask_prob, rng);
            std::vector<GcSegment> segs;
            if (!plan.masked.empty())
                segs.push_back({ex->role, frozen_object_states(frozen, plan.masked)});
            int out = model.forward(tape, tokens, segments, segs);
            const int text_len = static_cast<int>(tokens.size());
            for (int i : plan.selected) {
                pred_rows.push_back(tape.slice_rows(out, text_len + i, 1));
                mgm_targets.push_back(&ex->codes[static_cast<size_t>(i)]);
            }
            if (stats) {
                stats->selected += static_cast<int>(plan.selected.size());
                stats->n_mask += plan.n_mask;
                stats->n_random += plan.n_random;
                stats->n_keep += plan.n_keep;
            }
        } else {
            throw nn::NnError("invalid pre-training task");
        }
    }

    if (pred_rows.empty()) return tape.constant(scalar_mat(0.0));
    int hsel = pred_rows.size() == 1 ? pred_rows[0] : tape.concat_rows(pred_rows);
    std::vector<int> losses;
    if (task == PretrainTask::MGM_MULTI) {
        for (int f = 0; f < geoenc::FAM_COUNT; ++f) {
            std::string fam = geoenc::family_name(f);
            int logits = tape.add_rowvec(tape.matmul(hsel, tape.param(ps, "mm.mgm." + fam + ".w")),
                                         tape.param(ps, "mm.mgm." + fam + ".b"));
            for (size_t s = 0; s < mgm_targets.size(); ++s)
                losses.push_back(tape.ce_loss(tape.slice_rows(logits, static_cast<int>(s), 1),
                                              mgm_targets[s]->code[f]));
        }
        return tape.scale(tape.add_scalars(losses),
                          1.0 / static_cast<double>(mgm_targets.size()));
    }
    int logits = tape.add_rowvec(tape.matmul(hsel, tape.param(ps, "mm.mlm.w")),
                                 tape.param(ps, "mm.mlm.b"));
    for (size_t s = 0; s < mlm_targets.size(); ++s)
        losses.push_back(
            tape.ce_loss(tape.slice_rows(logits, static_cast<int>(s), 1), mlm_targets[s]));
    return tape.scale(tape.add_scalars(losses), 1.0 / static_cast<double>(mlm_targets.size()));
}

std::vector<PretrainTraceRow> pretrain_round_robin(InteractionModel& model,
                                                   geoenc::GeoEncoder& frozen,
                                                   const std::vector<PretrainExample>& corpus,
                                                   const PretrainConfig& pc, uint64_t seed) {
    if (corpus.empty()) throw nn::NnError("pre-training corpus is empty");
    Rng shuffle_rng(seed, "mm.shuffle");
    Rng mask_rng(seed, "mm.mask");
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const std::array<PretrainTask, 3> cycle{PretrainTask::MLM_SINGLE, PretrainTask::MLM_MULTI,
                                            PretrainTask::MGM_MULTI};
    std::vector<PretrainTraceRow> trace;
    int step = 0;
    for (int epoch = 0; epoch < pc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(pc.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(pc.batch_size));
            std::vector<const PretrainExample*> batch;
            for (size_t b = start; b < end; ++b) batch.push_back(&corpus[order[b]]);
            PretrainTask task = cycle[static_cast<size_t>(step) % cycle.size()];

            nn::Tape tape;
            int loss = pretrain_loss(tape, model, frozen, batch, task, pc.mask_prob, mask_rng);
            double val = tape.val(loss)(0, 0);
            if (!std::isfinite(val))
                throw nn::NnError("non-finite " + std::string(pretrain_task_name(task)) +
                                  " loss at step " + std::to_string(step));
            model.params().zero_grads();
            tape.backward(loss);
            nn::adamw_step(model.params(), pc.opt);
            trace.push_back({step, task, val});
            ++step;
        }
    }
    return trace;
}

void save_pretrain_trace(const std::vector<PretrainTraceRow>& trace, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw nn::NnError("unwritable destination: " + path);
    char buf[96];
    for (const auto& row : trace) {
        std::snprintf(buf, sizeof(buf), "%d\t%s\t%.17g\n", row.step, pretrain_task_name(row.task),
                      row.loss);
        os << buf;
    }
    if (!os) throw nn::NnError("unwritable destination: " + path);
}

namespace {

std::vector<std::vector<nn::Real>> snapshot_values(const nn::ParameterStore& ps) {
    std::vector<std::vector<nn::Real>> snap;
    snap.reserve(ps.names().size());
    for (const auto& name : ps.names()) snap.push_back(ps.at(name).values);
    return snap;
}

void restore_values(nn::ParameterStore& ps, const std::vector<std::vector<nn::Real>>& snap) {
    for (size_t i = 0; i < ps.names().size(); ++i) ps.at(ps.names()[i]).values = snap[i];
}

// Candidate slate for one training step: gold first, then every candidate
// whose text equals the gold's (the textual twins), then random fill.
std::vector<std::string> build_slate(const Query& q, const FinetuneData& data, int cap, Rng& rng) {
    if (std::find(q.candidates.begin(), q.candidates.end(), q.gold) == q.candidates.end())
        throw nn::NnError("candidate list without gold for query " + q.id);
    const std::vector<int>& gold_toks = data.poi_tokens(q.gold);
    std::vector<std::string> twins, others;
    for (const auto& pid : q.candidates) {
        if (pid == q.gold) continue;
        if (data.poi_tokens(pid) == gold_toks)
            twins.push_back(pid);
        else
            others.push_back(pid);
    }
    std::vector<std::string> slate{q.gold};
    for (const auto& t : twins) {
        if (static_cast<int>(slate.size()) >= cap) break;
        slate.push_back(t);
    }
    rng.shuffle(others);
    for (const auto& o : others) {
        if (static_cast<int>(slate.size()) >= cap) break;
        slate.push_back(o);
    }
    return slate;
}

double dev_recall1(InteractionModel& model, const FinetuneData& data, const FinetuneConfig& fc) {
    size_t n = std::min(data.dev_queries.size(), static_cast<size_t>(fc.dev_eval_cap));
    if (n == 0) return 0.0;
    std::unordered_map<std::string, Eigen::RowVectorXd> poi_cls;  // bi-encoder cache
    int hits = 0;
    for (size_t qi = 0; qi < n; ++qi) {
        const Query& q = data.query(data.dev_queries[qi]);
        const std::vector<int>& q_toks = data.query_tokens(q.id);
        const nn::Mat* q_gc = data.query_gc(q.id);
        Eigen::RowVectorXd q_vec;
        if (fc.head == Head::BI) {
            nn::Tape tape;
            q_vec = tape.val(model.tower_cls(tape, q_toks, Role::QUERY, q_gc)).row(0);
        }
        std::string best_id;
        double best_score = 0.0;
        for (const auto& pid : q.candidates) {
            double s;
            if (fc.head == Head::BI) {
                auto it = poi_cls.find(pid);
                if (it == poi_cls.end()) {
                    nn::Tape tape;
                    Eigen::RowVectorXd v =
                        tape.val(model.tower_cls(tape, data.poi_tokens(pid), Role::POI,
                                                 data.poi_gc(pid)))
                            .row(0);
                    it = poi_cls.emplace(pid, std::move(v)).first;
                }
                double nq = q_vec.norm(), np = it->second.norm();
                s = q_vec.dot(it->second) / std::max(nq * np, 1e-12);
            } else {
                s = model.cross_score(q_toks, q_gc, data.poi_tokens(pid), data.poi_gc(pid));
            }
            if (best_id.empty() || s > best_score || (s == best_score && pid < best_id)) {
                best_id = pid;
                best_score = s;
            }
        }
        if (best_id == q.gold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

FinetuneResult finetune(InteractionModel& model, const FinetuneData& data,
                        const FinetuneConfig& fc, uint64_t seed) {
    if (data.train_queries.empty()) throw nn::NnError("fine-tuning set is empty");
    Rng shuffle_rng(seed, "ft.shuffle");
    Rng slate_rng(seed, "ft.slate");
    std::vector<size_t> order(data.train_queries.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    FinetuneResult result;
    std::vector<std::vector<nn::Real>> best_snap;
    int step = 0;
    for (int epoch = 0; epoch < fc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        size_t pos = 0;
        while (pos < order.size()) {
            size_t group_end = std::min(order.size(), pos + static_cast<size_t>(fc.accum));
            const double inv_group = 1.0 / static_cast<double>(group_end - pos);
            model.params().zero_grads();
            double group_loss = 0.0;
            for (; pos < group_end; ++pos) {
                const Query& q = data.query(data.train_queries[order[pos]]);
                std::vector<std::string> slate = build_slate(q, data, fc.max_candidates, slate_rng);
                nn::Tape tape;
                const std::vector<int>& q_toks = data.query_tokens(q.id);
                const nn::Mat* q_gc = data.query_gc(q.id);
                std::vector<int> scores;
                scores.reserve(slate.size());
                for (const auto& pid : slate) {
                    if (fc.head == Head::BI) {
                        int c = model.bi_score_node(tape, q_toks, q_gc, data.poi_tokens(pid),
                                                    data.poi_gc(pid));
                        scores.push_back(tape.scale(c, 1.0 / fc.temperature));
                    } else {
                        scores.push_back(model.cross_score_node(tape, q_toks, q_gc,
                                                                data.poi_tokens(pid),
                                                                data.poi_gc(pid)));
                    }
                }
                int row = scores.size() == 1 ? scores[0] : tape.concat_cols(scores);
                int loss = tape.scale(tape.ce_loss(row, 0), inv_group);
                double val = tape.val(loss)(0, 0);
                if (!std::isfinite(val))
                    throw nn::NnError("non-finite fine-tuning loss at step " +
                                      std::to_string(step));
                group_loss += val;
                tape.backward(loss);
            }
            nn::adamw_step(model.params(), fc.opt);
            result.loss_trace.push_back({step, group_loss});
            ++step;
        }
        double r1 = dev_recall1(model, data, fc);
        result.dev_recall1_per_epoch.push_back(r1);
        if (result.best_epoch < 0 || r1 > result.best_dev_recall1) {
            result.best_epoch = epoch;
            result.best_dev_recall1 = r1;
            best_snap = snapshot_values(model.params());
        }
    }
    restore_values(model.params(), best_snap);
    return result;
}

}  // namespace mgeo::mm
