#include "mgeo/geoenc.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mgeo/spatial.hpp"

namespace mgeo::geoenc {

using spatial::haversine;

namespace {
nn::Mat scalar_mat(double v) {
    nn::Mat m(1, 1);
    m(0, 0) = v;
    return m;
}
}  // namespace

const char* family_name(int family) {
    switch (family) {
        case FAM_RELATION: return "relation";
        case FAM_SHAPE: return "shape";
        case FAM_ID: return "id";
        case FAM_REL_POS_LEFT: return "relpos.left";
        case FAM_REL_POS_BOTTOM: return "relpos.bottom";
        case FAM_REL_POS_RIGHT: return "relpos.right";
        case FAM_REL_POS_TOP: return "relpos.top";
        case FAM_GRID_LEFT: return "grid.left";
        case FAM_GRID_BOTTOM: return "grid.bottom";
        case FAM_GRID_RIGHT: return "grid.right";
        case FAM_GRID_TOP: return "grid.top";
        default: throw nn::NnError("unknown feature family");
    }
}

int GeoEncoderConfig::family_vocab(int family) const {
    switch (family) {
        case FAM_RELATION:
        case FAM_SHAPE:
            return 2;
        case FAM_ID:
            return gc.id_vocab + 1;  // hashed buckets + out-of-vocabulary row
        case FAM_REL_POS_LEFT:
        case FAM_REL_POS_BOTTOM:
        case FAM_REL_POS_RIGHT:
        case FAM_REL_POS_TOP:
            return 2 * gc.k + 1;
        case FAM_GRID_LEFT:
        case FAM_GRID_BOTTOM:
        case FAM_GRID_RIGHT:
        case FAM_GRID_TOP:
            return gc.grid_n;
        default:
            throw nn::NnError("unknown feature family");
    }
}

void GeoEncoderConfig::validate() const {
    gc.validate();
    trunk.validate();
    if (trunk.max_seq < gc.n_max + 1)
        throw nn::NnError("geo encoder max_seq must cover n_max objects plus the GC token");
}

ObjectCodes codes_from_features(const gc::ObjectFeatures& f) {
    ObjectCodes c;
    c.code[FAM_RELATION] = f.relation_code;
    c.code[FAM_SHAPE] = f.shape_code;
    c.code[FAM_ID] = f.object_id_code;
    for (int s = 0; s < 4; ++s) {
        c.code[FAM_REL_POS_LEFT + s] = f.rel_pos_codes[static_cast<size_t>(s)];
        c.code[FAM_GRID_LEFT + s] = f.grid_codes[static_cast<size_t>(s)];
    }
    return c;
}

std::vector<ObjectCodes> codes_from_record(const gc::GCRecord& rec) {
    std::vector<ObjectCodes> out;
    out.reserve(rec.objects.size());
    for (const auto& f : rec.objects) out.push_back(codes_from_features(f));
    return out;
}

MaskPlan plan_object_mask(const std::vector<ObjectCodes>& objects, const GeoEncoderConfig& cfg,
                          double mask_prob, Rng& rng) {
    MaskPlan plan;
    plan.masked = objects;
    for (size_t i = 0; i < objects.size(); ++i) {
        if (!rng.bernoulli(mask_prob)) continue;
        plan.selected.push_back(static_cast<int>(i));
        double mode = rng.uniform();
        if (mode < 0.8) {
            for (int f = 0; f < FAM_COUNT; ++f) plan.masked[i].code[f] = cfg.mask_code(f);
            ++plan.n_mask;
        } else if (mode < 0.9) {
            for (int f = 0; f < FAM_COUNT; ++f)
                plan.masked[i].code[f] = static_cast<int>(rng.below(
                    static_cast<uint64_t>(cfg.family_vocab(f))));
            ++plan.n_random;
        } else {
            ++plan.n_keep;
        }
    }
    return plan;
}

GeoEncoder::GeoEncoder(GeoEncoderConfig cfg, uint64_t seed) : cfg_(std::move(cfg)), ps_(seed) {
    cfg_.validate();
    const int h = cfg_.trunk.hidden;
    for (int f = 0; f < FAM_COUNT; ++f) {
        std::string fam = family_name(f);
        ps_.add("geo.emb." + fam, {cfg_.family_vocab(f) + 1, h});
        ps_.add("geo.head." + fam + ".w", {h, cfg_.family_vocab(f)});
        ps_.add("geo.head." + fam + ".b", {1, cfg_.family_vocab(f)}, nn::Init::ZEROS);
    }
    ps_.add("geo.gc_token", {1, h});
    ps_.add("geo.emb_ln.gamma", {1, h}, nn::Init::ONES);
    ps_.add("geo.emb_ln.beta", {1, h}, nn::Init::ZEROS);
    nn::add_transformer_params(ps_, "geo.trunk", cfg_.trunk);
}

int GeoEncoder::embed_objects(nn::Tape& tape, const std::vector<ObjectCodes>& objects) {
    if (objects.empty()) throw nn::NnError("embed_objects: empty object list");
    int sum = -1;
    for (int f = 0; f < FAM_COUNT; ++f) {
        std::vector<int> rows;
        rows.reserve(objects.size());
        for (const auto& o : objects) {
            int code = o.code[f];
            if (code < 0 || code > cfg_.mask_code(f))
                throw nn::NnError(std::string("feature code out of range for family ") +
                                  family_name(f));
            rows.push_back(code);
        }
        int emb = tape.gather(ps_, std::string("geo.emb.") + family_name(f), std::move(rows));
        sum = (f == 0) ? emb : tape.add(sum, emb);
    }
    return sum;
}

int GeoEncoder::encode(nn::Tape& tape, const std::vector<ObjectCodes>& objects) {
    if (static_cast<int>(objects.size()) > cfg_.trunk.max_seq - 1)
        throw nn::NnError("geo encoder sequence overflow: " + std::to_string(objects.size()) +
                          " objects");
    int gc_tok = tape.param(ps_, "geo.gc_token");
    int seq = objects.empty() ? gc_tok
                              : tape.concat_rows({gc_tok, embed_objects(tape, objects)});
    int x = tape.layer_norm(seq, tape.param(ps_, "geo.emb_ln.gamma"),
                            tape.param(ps_, "geo.emb_ln.beta"));
    return nn::transformer_encode(tape, ps_, "geo.trunk", cfg_.trunk, x);
}

nn::Mat GeoEncoder::encode_values(const std::vector<ObjectCodes>& objects) {
    nn::Tape tape;
    return tape.val(encode(tape, objects));
}

int GeoEncoder::mgm_loss(nn::Tape& tape, const std::vector<int>& encoded,
                         const std::vector<MaskPlan>& plans,
                         const std::vector<std::vector<ObjectCodes>>& originals) {
    if (encoded.size() != plans.size() || plans.size() != originals.size())
        throw nn::NnError("mgm_loss: batch size mismatch");
    std::vector<int> sel_rows;
    std::vector<const ObjectCodes*> targets;
    for (size_t r = 0; r < plans.size(); ++r) {
        for (int i : plans[r].selected) {
            sel_rows.push_back(tape.slice_rows(encoded[r], 1 + i, 1));
            targets.push_back(&originals[r][static_cast<size_t>(i)]);
        }
    }
    if (sel_rows.empty()) return tape.constant(scalar_mat(0.0));
    int hsel = sel_rows.size() == 1 ? sel_rows[0] : tape.concat_rows(sel_rows);
    std::vector<int> losses;
    for (int f = 0; f < FAM_COUNT; ++f) {
        std::string fam = family_name(f);
        int logits = tape.add_rowvec(tape.matmul(hsel, tape.param(ps_, "geo.head." + fam + ".w")),
                                     tape.param(ps_, "geo.head." + fam + ".b"));
        for (size_t s = 0; s < targets.size(); ++s)
            losses.push_back(tape.ce_loss(tape.slice_rows(logits, static_cast<int>(s), 1),
                                          targets[s]->code[f]));
    }
    return tape.scale(tape.add_scalars(losses), 1.0 / static_cast<double>(targets.size()));
}

std::optional<int> GeoEncoder::gcl_loss(nn::Tape& tape, const std::vector<int>& encoded,
                                        const std::vector<GeoPoint>& anchors) {
    if (encoded.size() != anchors.size())
        throw nn::NnError("gcl_loss: batch size mismatch");
    if (anchors.size() < 2) throw nn::NnError("gcl_loss: batch size must be at least 2");
    auto target = build_geo_target(anchors);
    if (!target) return std::nullopt;
    std::vector<int> gc_rows;
    gc_rows.reserve(encoded.size());
    for (int e : encoded) gc_rows.push_back(tape.slice_rows(e, 0, 1));
    int latent = tape.l2_normalize_rows(tape.concat_rows(gc_rows));
    int sims = tape.matmul_nt(latent, latent);
    return tape.kl_softmax_rows(*target, sims, offdiag_mask(static_cast<int>(anchors.size())));
}

std::optional<nn::Mat> build_geo_target(const std::vector<GeoPoint>& anchors) {
    const int n = static_cast<int>(anchors.size());
    if (n < 2) throw nn::NnError("geo target needs at least 2 anchors");
    nn::Mat d(n, n);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double dist = haversine(anchors[static_cast<size_t>(i)], anchors[static_cast<size_t>(j)]);
            d(i, j) = dist;
            sum += dist;
            sumsq += dist * dist;
        }
    }
    const double count = static_cast<double>(n) * (n - 1);
    const double mean = sum / count;
    const double var = std::max(0.0, sumsq / count - mean * mean);
    const double sd = std::sqrt(var);
    if (sd <= 1e-9) return std::nullopt;
    nn::Mat h = nn::Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) h(i, j) = 1.0 / (1.0 + std::exp((d(i, j) - mean) / sd));
    return h;
}

std::vector<unsigned char> offdiag_mask(int n) {
    std::vector<unsigned char> m(static_cast<size_t>(n) * static_cast<size_t>(n), 1);
    for (int i = 0; i < n; ++i) m[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(i)] = 0;
    return m;
}

std::vector<TraceRow> train_geo_encoder(GeoEncoder& enc, const std::vector<gc::GCRecord>& records,
                                        const GeoTrainConfig& tc, uint64_t seed) {
    if (records.empty()) throw nn::NnError("geo training corpus is empty");
    std::vector<std::vector<ObjectCodes>> codes;
    std::vector<GeoPoint> anchors;
    codes.reserve(records.size());
    anchors.reserve(records.size());
    for (const auto& r : records) {
        codes.push_back(codes_from_record(r));
        anchors.push_back(r.anchor);
    }

    Rng shuffle_rng(seed, "geo.shuffle");
    Rng mask_rng(seed, "geo.mask");
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<TraceRow> trace;
    int step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tc.batch_size)) {
            size_t end = std::min(order.size(), start + static_cast<size_t>(tc.batch_size));
            if (end - start < 2) continue;  // pairwise loss needs two anchors

            nn::Tape tape;
            std::vector<int> encoded;
            std::vector<MaskPlan> plans;
            std::vector<std::vector<ObjectCodes>> originals;
            std::vector<GeoPoint> batch_anchors;
            for (size_t b = start; b < end; ++b) {
                size_t idx = order[b];
                plans.push_back(plan_object_mask(codes[idx], enc.config(), tc.mask_prob, mask_rng));
                encoded.push_back(enc.encode(tape, plans.back().masked));
                originals.push_back(codes[idx]);
                batch_anchors.push_back(anchors[idx]);
            }
            int mgm = enc.mgm_loss(tape, encoded, plans, originals);
            auto gcl = enc.gcl_loss(tape, encoded, batch_anchors);
            double gcl_val = 0.0;
            int total = mgm;
            if (gcl) {
                gcl_val = tape.val(*gcl)(0, 0);
                total = tape.add_scalars({mgm, *gcl});
            } else {
                std::fprintf(stderr,
                             "geo training: degenerate distance batch at step %d, skipping "
                             "contrastive term\n",
                             step);
            }
            double mgm_val = tape.val(mgm)(0, 0);
            if (!std::isfinite(mgm_val) || !std::isfinite(gcl_val))
                throw nn::NnError("non-finite geo loss at step " + std::to_string(step) +
                                  " (mgm=" + std::to_string(mgm_val) +
                                  ", gcl=" + std::to_string(gcl_val) + ")");
            enc.params().zero_grads();
            tape.backward(total);
            nn::adamw_step(enc.params(), tc.opt);
            trace.push_back({step, mgm_val, gcl_val});
            ++step;
        }
    }
    return trace;
}

void save_trace(const std::vector<TraceRow>& trace, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw nn::NnError("unwritable destination: " + path);
    char buf[96];
    for (const auto& row : trace) {
        std::snprintf(buf, sizeof(buf), "%d\t%.17g\t%.17g\n", row.step, row.mgm, row.gcl);
        os << buf;
    }
    if (!os) throw nn::NnError("unwritable destination: " + path);
}

}  // namespace mgeo::geoenc
