#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mgeo/geoenc.hpp"
#include "mgeo/spatial.hpp"
#include "testutil.hpp"

using namespace mgeo;
using namespace mgeo::geoenc;

namespace {

GeoEncoderConfig tiny_config() {
    GeoEncoderConfig cfg;
    cfg.gc.k = 3;
    cfg.gc.grid_n = 8;
    cfg.gc.map_bounds = gc::Rect{120.0, 30.0, 120.2, 30.2};
    cfg.gc.n_max = 6;
    cfg.gc.id_vocab = 13;
    cfg.trunk = nn::TransformerConfig{1, 16, 2, 2, 8};
    return cfg;
}

ObjectCodes random_codes(const GeoEncoderConfig& cfg, Rng& rng) {
    ObjectCodes c;
    for (int f = 0; f < FAM_COUNT; ++f) {
        c.code[f] = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.family_vocab(f))));
    }
    return c;
}

std::vector<ObjectCodes> random_object_list(const GeoEncoderConfig& cfg, Rng& rng, int n) {
    std::vector<ObjectCodes> out;
    for (int i = 0; i < n; ++i) out.push_back(random_codes(cfg, rng));
    return out;
}

// Independent evaluation of the distance-target construction: pairwise
// z-score over off-diagonal entries, negated, logistic sigmoid.
nn::Mat target_from_distances(const nn::Mat& d) {
    const int n = static_cast<int>(d.rows());
    double sum = 0, sumsq = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            sum += d(i, j);
            sumsq += d(i, j) * d(i, j);
        }
    }
    double count = static_cast<double>(n) * (n - 1);
    double mean = sum / count;
    double sd = std::sqrt(std::max(0.0, sumsq / count - mean * mean));
    REQUIRE(sd > 1e-9);
    nn::Mat h = nn::Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            double z = (d(i, j) - mean) / sd;
            h(i, j) = 1.0 / (1.0 + std::exp(z));
        }
    }
    return h;
}

// Row-wise KL(softmax(target row) || softmax(score row)) over off-diagonal
// entries, written directly against the definitions.
double kl_script(const nn::Mat& target, const nn::Mat& scores) {
    const int n = static_cast<int>(target.rows());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<double> t, s;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            t.push_back(target(i, j));
            s.push_back(scores(i, j));
        }
        auto softmax = [](std::vector<double> v) {
            double mx = v[0];
            for (double x : v) mx = std::max(mx, x);
            double z = 0;
            for (double& x : v) {
                x = std::exp(x - mx);
                z += x;
            }
            for (double& x : v) x /= z;
            return v;
        };
        auto p = softmax(t), q = softmax(s);
        for (size_t j = 0; j < p.size(); ++j) total += p[j] * std::log(p[j] / q[j]);
    }
    return total;
}

}  // namespace

TEST_CASE("family vocabularies and mask rows") {
    auto cfg = tiny_config();
    CHECK(cfg.family_vocab(FAM_RELATION) == 2);
    CHECK(cfg.family_vocab(FAM_SHAPE) == 2);
    CHECK(cfg.family_vocab(FAM_ID) == 14);  // hash buckets + OOV row
    for (int f = FAM_REL_POS_LEFT; f <= FAM_REL_POS_TOP; ++f) CHECK(cfg.family_vocab(f) == 7);
    for (int f = FAM_GRID_LEFT; f <= FAM_GRID_TOP; ++f) CHECK(cfg.family_vocab(f) == 8);
    for (int f = 0; f < FAM_COUNT; ++f) CHECK(cfg.mask_code(f) == cfg.family_vocab(f));

    // The trunk must fit n_max objects plus the prepended context token.
    auto bad = cfg;
    bad.trunk.max_seq = bad.gc.n_max;
    CHECK_THROWS_AS(bad.validate(), nn::NnError);
}

TEST_CASE("feature-to-code mapping preserves side order") {
    gc::ObjectFeatures f;
    f.object_id_code = 9;
    f.shape_code = 1;
    f.relation_code = 0;
    f.rel_pos_codes = {1, 2, 3, 4};
    f.grid_codes = {5, 6, 7, 0};
    auto c = codes_from_features(f);
    CHECK(c.code[FAM_RELATION] == 0);
    CHECK(c.code[FAM_SHAPE] == 1);
    CHECK(c.code[FAM_ID] == 9);
    CHECK(c.code[FAM_REL_POS_LEFT] == 1);
    CHECK(c.code[FAM_REL_POS_BOTTOM] == 2);
    CHECK(c.code[FAM_REL_POS_RIGHT] == 3);
    CHECK(c.code[FAM_REL_POS_TOP] == 4);
    CHECK(c.code[FAM_GRID_LEFT] == 5);
    CHECK(c.code[FAM_GRID_BOTTOM] == 6);
    CHECK(c.code[FAM_GRID_RIGHT] == 7);
    CHECK(c.code[FAM_GRID_TOP] == 0);
}

TEST_CASE("object embedding equals the eleven-term table-row sum") {
    auto cfg = tiny_config();
    GeoEncoder enc(cfg, 101);
    Rng rng(60);
    auto objects = random_object_list(cfg, rng, 4);

    nn::Tape tape;
    int emb = enc.embed_objects(tape, objects);
    const nn::Mat& got = tape.val(emb);
    REQUIRE(got.rows() == 4);
    REQUIRE(got.cols() == cfg.trunk.hidden);

    for (int i = 0; i < 4; ++i) {
        Eigen::RowVectorXd want = Eigen::RowVectorXd::Zero(cfg.trunk.hidden);
        for (int f = 0; f < FAM_COUNT; ++f) {
            const auto& table = enc.params().at(std::string("geo.emb.") + family_name(f));
            want += table.mat().row(objects[static_cast<size_t>(i)].code[f]);
        }
        CHECK((got.row(i) - want).cwiseAbs().maxCoeff() <= 1e-12);
    }

    auto bad = objects;
    bad[0].code[FAM_ID] = cfg.family_vocab(FAM_ID) + 1;  // beyond even the MASK row
    CHECK_THROWS_WITH_AS(enc.embed_objects(tape, bad), doctest::Contains("out of range"),
                         nn::NnError);
}

TEST_CASE("encode produces the context state first and is deterministic") {
    auto cfg = tiny_config();
    GeoEncoder enc(cfg, 102);
    Rng rng(61);

    // Empty record: just the context token.
    CHECK(enc.encode_values({}).rows() == 1);

    auto objects = random_object_list(cfg, rng, 5);
    auto out = enc.encode_values(objects);
    CHECK(out.rows() == 6);
    CHECK(out.cols() == cfg.trunk.hidden);
    CHECK(out == enc.encode_values(objects));

    // Sequence overflow: max_seq is 8, so 8 objects (plus token) do not fit.
    auto too_many = random_object_list(cfg, rng, 8);
    nn::Tape tape;
    CHECK_THROWS_WITH_AS(enc.encode(tape, too_many), doctest::Contains("overflow"), nn::NnError);
}

TEST_CASE("encode is permutation-covariant over objects") {
    auto cfg = tiny_config();
    GeoEncoder enc(cfg, 103);
    Rng rng(62);
    auto objects = random_object_list(cfg, rng, 4);

    auto base = enc.encode_values(objects);
    auto swapped_in = objects;
    std::swap(swapped_in[0], swapped_in[2]);
    auto swapped = enc.encode_values(swapped_in);

    CHECK((base.row(0) - swapped.row(0)).cwiseAbs().maxCoeff() <= 1e-12);  // context state
    CHECK((base.row(1) - swapped.row(3)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((base.row(3) - swapped.row(1)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((base.row(2) - swapped.row(2)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((base.row(4) - swapped.row(4)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("masking plan: rates, modes and replacement semantics") {
    auto cfg = tiny_config();
    Rng rng(63);

    // Zero probability: nothing selected, inputs untouched.
    auto objects = random_object_list(cfg, rng, 20);
    auto none = plan_object_mask(objects, cfg, 0.0, rng);
    CHECK(none.selected.empty());
    CHECK(none.masked == objects);

    // Certain selection: every object selected.
    auto all = plan_object_mask(objects, cfg, 1.0, rng);
    CHECK(all.selected.size() == objects.size());

    // Statistics over 10,000 objects at p = 0.15.
    int total = 0, selected = 0, n_mask = 0, n_random = 0, n_keep = 0;
    while (total < 10000) {
        auto batch = random_object_list(cfg, rng, 50);
        auto plan = plan_object_mask(batch, cfg, 0.15, rng);
        total += 50;
        selected += static_cast<int>(plan.selected.size());
        n_mask += plan.n_mask;
        n_random += plan.n_random;
        n_keep += plan.n_keep;

        // Replacement semantics, object by object.
        for (size_t i = 0; i < batch.size(); ++i) {
            bool was_selected = false;
            for (int s : plan.selected) was_selected |= s == static_cast<int>(i);
            if (!was_selected) {
                CHECK(plan.masked[i] == batch[i]);
                continue;
            }
            for (int f = 0; f < FAM_COUNT; ++f) {
                CHECK(plan.masked[i].code[f] >= 0);
                CHECK(plan.masked[i].code[f] <= cfg.mask_code(f));
            }
        }
    }
    double rate = static_cast<double>(selected) / total;
    CHECK(rate >= 0.14);
    CHECK(rate <= 0.16);
    CHECK(n_mask + n_random + n_keep == selected);
    CHECK(std::fabs(static_cast<double>(n_mask) / selected - 0.80) <= 0.02);
    CHECK(std::fabs(static_cast<double>(n_random) / selected - 0.10) <= 0.02);
    CHECK(std::fabs(static_cast<double>(n_keep) / selected - 0.10) <= 0.02);
}

TEST_CASE("masked-mode objects are wholly replaced by mask rows") {
    auto cfg = tiny_config();
    Rng rng(64);
    auto objects = random_object_list(cfg, rng, 400);
    auto plan = plan_object_mask(objects, cfg, 1.0, rng);

    int classified_mask = 0, classified_keep = 0, classified_random = 0;
    for (int i : plan.selected) {
        auto idx = static_cast<size_t>(i);
        bool all_mask = true;
        for (int f = 0; f < FAM_COUNT; ++f)
            all_mask &= plan.masked[idx].code[f] == cfg.mask_code(f);
        if (all_mask) {
            ++classified_mask;
        } else if (plan.masked[idx] == objects[idx]) {
            ++classified_keep;
        } else {
            ++classified_random;
            for (int f = 0; f < FAM_COUNT; ++f) {
                CHECK(plan.masked[idx].code[f] >= 0);
                CHECK(plan.masked[idx].code[f] < cfg.family_vocab(f));  // valid, not MASK
            }
        }
    }
    CHECK(classified_mask == plan.n_mask);
    CHECK(classified_keep >= plan.n_keep);  // a random redraw may coincide with the original
    CHECK(classified_random <= plan.n_random);
    CHECK(classified_keep - plan.n_keep == plan.n_random - classified_random);
}

TEST_CASE("mgm loss: empty selection and uniform-entropy initialization") {
    auto cfg = tiny_config();
    GeoEncoder enc(cfg, 104);
    Rng rng(65);

    // Nothing selected -> zero constant.
    auto objects = random_object_list(cfg, rng, 3);
    nn::Tape tape;
    MaskPlan plan;
    plan.masked = objects;
    int enc_node = enc.encode(tape, plan.masked);
    int loss = enc.mgm_loss(tape, {enc_node}, {plan}, {objects});
    CHECK(tape.val(loss)(0, 0) == 0.0);

    // At initialization the per-object loss approximates the uniform-entropy
    // sum over all eleven family vocabularies.
    double expected = std::log(2.0) * 2 + std::log(14.0) + 4 * std::log(7.0) + 4 * std::log(8.0);
    double measured = 0.0;
    int batches = 0;
    for (int rep = 0; rep < 20; ++rep) {
        nn::Tape t;
        std::vector<int> encoded;
        std::vector<MaskPlan> plans;
        std::vector<std::vector<ObjectCodes>> originals;
        for (int b = 0; b < 4; ++b) {
            auto objs = random_object_list(cfg, rng, 4);
            auto p = plan_object_mask(objs, cfg, 0.5, rng);
            encoded.push_back(enc.encode(t, p.masked));
            plans.push_back(p);
            originals.push_back(objs);
        }
        int l = enc.mgm_loss(t, encoded, plans, originals);
        if (t.val(l)(0, 0) == 0.0) continue;  // a batch may select nothing
        measured += t.val(l)(0, 0);
        ++batches;
    }
    measured /= batches;
    CHECK(measured >= 0.8 * expected);
    CHECK(measured <= 1.2 * expected);
}

TEST_CASE("distance target matches the scripted construction and its invariances") {
    std::vector<GeoPoint> anchors{{120.01, 30.01}, {120.05, 30.07}, {120.15, 30.02},
                                  {120.18, 30.18}};
    auto target = build_geo_target(anchors);
    REQUIRE(target.has_value());

    nn::Mat d(4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            d(i, j) = i == j ? 0.0
                             : spatial::haversine(anchors[static_cast<size_t>(i)],
                                                  anchors[static_cast<size_t>(j)]);
    nn::Mat scripted = target_from_distances(d);
    CHECK((*target - scripted).cwiseAbs().maxCoeff() <= 1e-12);

    // Entries live strictly inside (0, 1); nearer pairs score higher.
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            if (i == j) continue;
            CHECK((*target)(i, j) > 0.0);
            CHECK((*target)(i, j) < 1.0);
        }
    }

    // Affine rescaling of the raw distances leaves the target unchanged
    // (z-score absorbs scale and shift).
    nn::Mat rescaled = 3.7 * d.array() + 250.0;
    for (int i = 0; i < 4; ++i) rescaled(i, i) = 0.0;
    // The shift applies to off-diagonal entries only; rebuild explicitly.
    nn::Mat affine = d;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            if (i != j) affine(i, j) = 3.7 * d(i, j) + 250.0;
    CHECK((target_from_distances(affine) - scripted).cwiseAbs().maxCoeff() <= 1e-9);

    // Zero-variance distances are rejected as a degenerate batch.
    CHECK(!build_geo_target({{120.0, 30.0}, {120.0, 30.0}, {120.0, 30.0}}).has_value());
    // Two anchors always have equal off-diagonal distances, hence no target.
    CHECK(!build_geo_target({{120.0, 30.0}, {120.1, 30.1}}).has_value());
    CHECK_THROWS_AS(build_geo_target({{120.0, 30.0}}), nn::NnError);
}

TEST_CASE("contrastive loss: identities, positivity and the scripted oracle") {
    auto cfg = tiny_config();
    GeoEncoder enc(cfg, 105);
    Rng rng(66);

    std::vector<GeoPoint> anchors{{120.02, 30.03}, {120.09, 30.11}, {120.17, 30.05}};
    std::vector<std::vector<ObjectCodes>> lists;
    for (int i = 0; i < 3; ++i) lists.push_back(random_object_list(cfg, rng, 2 + i));

    nn::Tape tape;
    std::vector<int> encoded;
    for (const auto& l : lists) encoded.push_back(enc.encode(tape, l));
    auto loss = enc.gcl_loss(tape, encoded, anchors);
    REQUIRE(loss.has_value());
    double got = tape.val(*loss)(0, 0);
    CHECK(got >= 0.0);

    // Scripted evaluation: context rows -> unit rows -> cosine matrix -> row
    // softmaxes -> KL against the distance-derived target.
    nn::Mat latent(3, cfg.trunk.hidden);
    for (int i = 0; i < 3; ++i) {
        nn::Mat states = enc.encode_values(lists[static_cast<size_t>(i)]);
        Eigen::RowVectorXd row = states.row(0);
        latent.row(i) = row / std::max(row.norm(), 1e-12);
    }
    nn::Mat sims = latent * latent.transpose();

    nn::Mat d(3, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            d(i, j) = i == j ? 0.0
                             : spatial::haversine(anchors[static_cast<size_t>(i)],
                                                  anchors[static_cast<size_t>(j)]);
    double want = kl_script(target_from_distances(d), sims);
    CHECK(std::fabs(got - want) <= 1e-10);

    // Identical distributions -> zero loss, at the loss-assembly level.
    nn::Tape t2;
    auto target = build_geo_target(anchors);
    int zero = t2.kl_softmax_rows(*target, t2.constant(*target), offdiag_mask(3));
    CHECK(t2.val(zero)(0, 0) == doctest::Approx(0.0).epsilon(1e-14));

    // Degenerate geometry is reported as "skip", not a crash.
    nn::Tape t3;
    std::vector<int> enc2{enc.encode(t3, lists[0]), enc.encode(t3, lists[1])};
    CHECK(!enc.gcl_loss(t3, enc2, {{120.0, 30.0}, {120.1, 30.1}}).has_value());
    CHECK_THROWS_AS(enc.gcl_loss(t3, {enc2[0]}, {{120.0, 30.0}}), nn::NnError);
}

TEST_CASE("contrastive loss is non-negative over random batches") {
    auto cfg = tiny_config();
    GeoEncoder enc(cfg, 106);
    Rng rng(67);
    for (int rep = 0; rep < 100; ++rep) {
        int n = 3 + rng.index(3);
        nn::Tape tape;
        std::vector<int> encoded;
        std::vector<GeoPoint> anchors;
        for (int i = 0; i < n; ++i) {
            encoded.push_back(enc.encode(tape, random_object_list(cfg, rng, 1 + rng.index(4))));
            anchors.push_back({120.0 + rng.uniform(0.0, 0.2), 30.0 + rng.uniform(0.0, 0.2)});
        }
        auto loss = enc.gcl_loss(tape, encoded, anchors);
        REQUIRE(loss.has_value());
        CHECK(tape.val(*loss)(0, 0) >= -1e-12);
    }
}

TEST_CASE("geo training: smoke, determinism, trailing batch, convergence") {
    auto cfg = tiny_config();
    Rng rng(68);

    auto make_records = [&](int n) {
        std::vector<gc::GCRecord> recs;
        for (int i = 0; i < n; ++i) {
            gc::GCRecord r;
            r.anchor = {120.0 + rng.uniform(0.0, 0.2), 30.0 + rng.uniform(0.0, 0.2)};
            int objs = 1 + rng.index(4);
            for (int o = 0; o < objs; ++o) {
                gc::ObjectFeatures f;
                f.object_id_code = rng.index(14);
                f.shape_code = rng.index(2);
                f.relation_code = rng.index(2);
                for (int s = 0; s < 4; ++s) {
                    f.rel_pos_codes[static_cast<size_t>(s)] = rng.index(7);
                    f.grid_codes[static_cast<size_t>(s)] = rng.index(8);
                }
                r.objects.push_back(f);
            }
            recs.push_back(r);
        }
        return recs;
    };

    auto records = make_records(4);
    GeoTrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 2;

    GeoEncoder enc1(cfg, 200);
    auto trace1 = train_geo_encoder(enc1, records, tc, 300);
    CHECK(trace1.size() == 2);
    for (const auto& row : trace1) {
        CHECK(std::isfinite(row.mgm));
        CHECK(std::isfinite(row.gcl));
        CHECK(row.mgm > 0.0);
    }

    GeoEncoder enc2(cfg, 200);
    auto trace2 = train_geo_encoder(enc2, records, tc, 300);
    REQUIRE(trace1.size() == trace2.size());
    for (size_t i = 0; i < trace1.size(); ++i) {
        CHECK(trace1[i].mgm == trace2[i].mgm);
        CHECK(trace1[i].gcl == trace2[i].gcl);
    }

    // A trailing batch of one record is dropped.
    auto five = make_records(5);
    GeoEncoder enc3(cfg, 201);
    auto trace3 = train_geo_encoder(enc3, five, tc, 301);
    CHECK(trace3.size() == 2);

    // Loss decreases on a learnable corpus: every record repeats one of two
    // prototype objects, so masked features are predictable from neighbors
    // (uniformly random codes would leave nothing to learn).
    std::vector<gc::GCRecord> corpus;
    for (int i = 0; i < 24; ++i) {
        gc::ObjectFeatures proto;
        proto.object_id_code = i % 2 ? 3 : 11;
        proto.shape_code = i % 2;
        proto.relation_code = i % 2;
        proto.rel_pos_codes = {1, 2, 3, 4};
        proto.grid_codes = {0, 2, 4, 6};
        gc::GCRecord r;
        r.anchor = {120.0 + 0.008 * i, 30.0 + 0.005 * ((i * 7) % 24)};
        for (int o = 0; o < 2 + (i % 3); ++o) r.objects.push_back(proto);
        corpus.push_back(r);
    }
    GeoTrainConfig tc2;
    tc2.epochs = 10;
    tc2.batch_size = 8;
    tc2.opt.lr = 0.05;
    GeoEncoder enc4(cfg, 202);
    auto trace4 = train_geo_encoder(enc4, corpus, tc2, 302);
    REQUIRE(trace4.size() >= 6);
    double initial = trace4.front().mgm + trace4.front().gcl;
    double final_mean = 0.0;
    for (size_t i = trace4.size() - 3; i < trace4.size(); ++i)
        final_mean += trace4[i].mgm + trace4[i].gcl;
    final_mean /= 3.0;
    CHECK(final_mean < 0.5 * initial);

    CHECK_THROWS_AS(train_geo_encoder(enc4, {}, tc, 303), nn::NnError);
}

TEST_CASE("trace serialization format") {
    testutil::TempDir dir;
    std::string path = dir.file("trace.tsv");
    save_trace({{0, 36.25, 1.5}, {1, 30.0, 0.75}}, path);
    std::istringstream in(testutil::read_file(path));
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) {
        int step;
        double mgm, gcl;
        REQUIRE(std::sscanf(line.c_str(), "%d\t%lf\t%lf", &step, &mgm, &gcl) == 3);
        CHECK(step == rows);
        ++rows;
    }
    CHECK(rows == 2);
}
