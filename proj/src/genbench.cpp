#include "mgeo/genbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

#include "mgeo/rng.hpp"
#include "mgeo/tokenizer.hpp"

namespace mgeo::gen {

using spatial::haversine;
using spatial::point_to_object_distance;

namespace {

constexpr double kMetersPerDegLat = 111320.0;

const char* kRoadNames[] = {"jinhua", "yunhe", "baitang", "qingxi", "meiyuan"};
constexpr int kRoadNameCount = 5;

// District names are pairs from this pool; POI names are pairs from the other
// pool. The pools share no syllables, so the three name domains stay disjoint.
const char* kDistrictSyllables[] = {"an",   "bao",  "chun", "dong", "feng", "gu",   "hai",
                                    "jing", "kun",  "lan",  "ming", "nan",  "ping", "qiao",
                                    "rong", "shan", "tian", "wan",  "xing", "yuan"};
const char* kPoiSyllables[] = {"bei", "cang", "dai", "er",  "fomo", "gepu", "heli",
                               "ji",  "ke",   "lu",  "mo",  "niu",  "ou",   "pu",
                               "qi",  "ru",   "si",  "tu",  "wei",  "zhu"};
constexpr int kDistrictSyllableCount = 20;
constexpr int kPoiSyllableCount = 20;

double deg_lat(double meters) {
    return meters / kMetersPerDegLat;
}
double deg_lng(double meters, double lat) {
    return meters / (kMetersPerDegLat * std::cos(lat * M_PI / 180.0));
}

std::string pad_id(const char* prefix, int i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-%0*d", prefix, width, i);
    return buf;
}

struct PoiMeta {
    std::string name;
    std::string road_name;
    std::string district;
    int number = 0;
    int group = -1;  // collision group index, -1 for unique POIs
};

struct Layout {
    std::vector<GeoObject> objects;           // polygons then roads
    std::vector<std::string> district_names;  // aligned with polygon objects
    std::vector<size_t> road_index;           // object index of each road
    std::vector<std::string> road_name;       // aligned with road_index
    size_t polygon_count = 0;
};

Layout build_layout(const GenSpec& spec, Rng& rng) {
    Layout lay;
    // Districts tile a jittered grid so most of the city is covered and no
    // two districts overlap.
    int g = 1;
    while (g * g < spec.polygons) ++g;
    double cell_w = spec.city.width() / g;
    double cell_h = spec.city.height() / g;
    std::set<std::string> seen;
    for (int i = 0; i < spec.polygons; ++i) {
        double l = spec.city.left + (i % g) * cell_w;
        double b = spec.city.bottom + (i / g) * cell_h;
        double ml = rng.uniform(0.03, 0.10) * cell_w;
        double mr = rng.uniform(0.03, 0.10) * cell_w;
        double mb = rng.uniform(0.03, 0.10) * cell_h;
        double mt = rng.uniform(0.03, 0.10) * cell_h;
        GeoObject o;
        o.id = pad_id("dist", i, 3);
        o.shape = Shape::POLYGON;
        o.vertices = {{l + ml, b + mb},
                      {l + cell_w - mr, b + mb},
                      {l + cell_w - mr, b + cell_h - mt},
                      {l + ml, b + cell_h - mt}};
        lay.objects.push_back(std::move(o));
        std::string name = std::string(kDistrictSyllables[i / kDistrictSyllableCount]) +
                           kDistrictSyllables[i % kDistrictSyllableCount];
        if (!seen.insert(name).second) throw GenError("district name pool exhausted");
        lay.district_names.push_back(std::move(name));
    }
    lay.polygon_count = lay.objects.size();

    // Roads: each of the five names places its instances in distinct zones of
    // a 3x3 grid, keeping same-named roads kilometres apart.
    const int zone_grid = 3;
    double zone_w = spec.city.width() / zone_grid;
    double zone_h = spec.city.height() / zone_grid;
    const double margin = 0.27;
    std::vector<int> next_instance(kRoadNameCount, 0);
    for (int r = 0; r < spec.roads; ++r) {
        int name_idx = r % kRoadNameCount;
        int inst = next_instance[name_idx]++;
        int zone = inst % (zone_grid * zone_grid);
        double cl = spec.city.left + (zone % zone_grid) * zone_w + margin * zone_w;
        double cr = spec.city.left + (zone % zone_grid) * zone_w + (1.0 - margin) * zone_w;
        double cb = spec.city.bottom + (zone / zone_grid) * zone_h + margin * zone_h;
        double ct = spec.city.bottom + (zone / zone_grid) * zone_h + (1.0 - margin) * zone_h;
        bool horizontal = rng.bernoulli(0.5);
        GeoObject o;
        o.id = pad_id("road", r, 3);
        o.shape = Shape::LINE;
        if (horizontal) {
            double y = rng.uniform(cb, ct);
            double x0 = rng.uniform(cl, cl + 0.25 * (cr - cl));
            double x1 = rng.uniform(x0 + 0.55 * (cr - x0), cr);
            double ym = y + rng.uniform(-0.08, 0.08) * (ct - cb);
            o.vertices = {{x0, y}, {(x0 + x1) / 2.0, ym}, {x1, y}};
        } else {
            double x = rng.uniform(cl, cr);
            double y0 = rng.uniform(cb, cb + 0.25 * (ct - cb));
            double y1 = rng.uniform(y0 + 0.55 * (ct - y0), ct);
            double xm = x + rng.uniform(-0.08, 0.08) * (cr - cl);
            o.vertices = {{x, y0}, {xm, (y0 + y1) / 2.0}, {x, y1}};
        }
        lay.road_index.push_back(lay.objects.size());
        lay.road_name.push_back(kRoadNames[name_idx]);
        lay.objects.push_back(std::move(o));
    }
    return lay;
}

// District of a point: the covering polygon with the lowest id, else the
// nearest polygon (same distance kernels the GC extraction uses).
std::string district_of(const GeoPoint& l, const Layout& lay, bool* covered = nullptr) {
    double best = std::numeric_limits<double>::infinity();
    size_t best_i = 0;
    for (size_t i = 0; i < lay.polygon_count; ++i) {
        double d = point_to_object_distance(l, lay.objects[i]);
        if (d < best || (d == best && lay.objects[i].id < lay.objects[best_i].id)) {
            best = d;
            best_i = i;
        }
    }
    if (covered) *covered = best == 0.0;
    return lay.district_names[best_i];
}

GeoPoint point_near_road(const GeoObject& road, Rng& rng) {
    size_t seg = rng.below(road.vertices.size() - 1);
    const GeoPoint& a = road.vertices[seg];
    const GeoPoint& b = road.vertices[seg + 1];
    double t = rng.uniform(0.15, 0.85);
    GeoPoint base{a.lng + t * (b.lng - a.lng), a.lat + t * (b.lat - a.lat)};
    double r = rng.uniform(15.0, 90.0);
    double theta = rng.uniform(0.0, 2.0 * M_PI);
    return {base.lng + deg_lng(r * std::cos(theta), base.lat),
            base.lat + deg_lat(r * std::sin(theta))};
}

std::string poi_name(int combo) {
    return std::string(kPoiSyllables[combo / kPoiSyllableCount]) +
           kPoiSyllables[combo % kPoiSyllableCount];
}

std::string poi_text(const PoiMeta& m) {
    return m.name + " No." + std::to_string(m.number) + " " + m.road_name + " road";
}

}  // namespace

void GenSpec::validate() const {
    if (city.width() <= 0.0 || city.height() <= 0.0) throw GenError("degenerate city bounds");
    if (roads < 1 || polygons < 1 || pois < 1 || queries < 1)
        throw GenError("entity counts must be at least 1");
    for (double f : {address_fraction, street_no_fraction, collision_rate, near_fraction,
                     train_fraction, dev_fraction})
        if (f < 0.0 || f > 1.0) throw GenError("fractions must lie in [0, 1]");
    if (address_fraction + street_no_fraction > 1.0)
        throw GenError("query type mix exceeds 1");
    if (train_fraction + dev_fraction > 1.0) throw GenError("split fractions exceed 1");
    if (train_candidates < 1 || eval_candidates < 1)
        throw GenError("candidate counts must be at least 1");
    if (train_candidates > pois || eval_candidates > pois)
        throw GenError("infeasible spec: candidate list larger than the POI count");
    int collision_pois = static_cast<int>(std::llround(collision_rate * pois));
    if (collision_pois > pois)
        throw GenError("infeasible spec: more collision POIs than POIs");
    if (collision_pois > 0) {
        if (collision_group_size < 2)
            throw GenError("collision groups need at least 2 members");
        int instances_per_name = roads / kRoadNameCount;
        if (collision_group_size > instances_per_name)
            throw GenError("infeasible spec: collision group larger than road instances per name");
        if (collision_group_size > 9)
            throw GenError("infeasible spec: collision group exceeds separation zones");
    }
}

CorpusBundle generate_benchmark(const GenSpec& spec) {
    spec.validate();
    Rng layout_rng(spec.seed, "gen.layout");
    Rng poi_rng(spec.seed, "gen.pois");
    Rng query_rng(spec.seed, "gen.queries");
    Rng split_rng(spec.seed, "gen.splits");
    Rng cand_rng(spec.seed, "gen.candidates");

    Layout lay = build_layout(spec, layout_rng);

    const int collision_pois = static_cast<int>(std::llround(spec.collision_rate * spec.pois));
    const int groups = collision_pois / spec.collision_group_size;
    const int grouped = groups * spec.collision_group_size;
    const int unique_pois = spec.pois - grouped;
    if (unique_pois + groups > kPoiSyllableCount * kPoiSyllableCount)
        throw GenError("POI name pool exhausted");

    // Road instances per name, in id order (the id order also fixes which
    // twin carries the lexicographically smallest POI id).
    std::map<std::string, std::vector<size_t>> instances;
    for (size_t r = 0; r < lay.road_index.size(); ++r)
        instances[lay.road_name[r]].push_back(lay.road_index[r]);

    CorpusBundle bundle;
    bundle.objects = lay.objects;

    std::vector<PoiMeta> meta(static_cast<size_t>(spec.pois));
    auto place_poi = [&](PoiMeta& m, const GeoObject& road) {
        GeoPoint loc{};
        bool covered = false;
        for (int attempt = 0; attempt < 60 && !covered; ++attempt) {
            loc = point_near_road(road, poi_rng);
            m.district = district_of(loc, lay, &covered);
        }
        return loc;
    };

    int poi_idx = 0;
    for (int g = 0; g < groups; ++g) {
        std::string name = poi_name(unique_pois + g);
        const std::string& road_name = kRoadNames[g % kRoadNameCount];
        const auto& insts = instances[road_name];
        int number = unique_pois + 1 + g;  // numbers disjoint from unique POIs
        for (int mb = 0; mb < spec.collision_group_size; ++mb, ++poi_idx) {
            PoiMeta& m = meta[static_cast<size_t>(poi_idx)];
            m.name = name;
            m.road_name = road_name;
            m.number = number;
            m.group = g;
            Poi p;
            p.id = pad_id("poi", poi_idx, 4);
            p.location = place_poi(m, bundle.objects[insts[static_cast<size_t>(mb)]]);
            p.text = poi_text(m);
            bundle.pois.push_back(std::move(p));
        }
    }
    for (int u = 0; u < unique_pois; ++u, ++poi_idx) {
        PoiMeta& m = meta[static_cast<size_t>(poi_idx)];
        m.name = poi_name(u);
        size_t road = poi_rng.below(lay.road_index.size());
        m.road_name = lay.road_name[road];
        m.number = 1 + u;
        Poi p;
        p.id = pad_id("poi", poi_idx, 4);
        p.location = place_poi(m, bundle.objects[lay.road_index[road]]);
        p.text = poi_text(m);
        bundle.pois.push_back(std::move(p));
    }

    // Queries: uniform over POIs, except that a collision group's smallest id
    // is never the gold — identically-described twins then tie in any purely
    // textual ranking and the deterministic id tie-break resolves against the
    // gold, which caps text-only Recall@1 at the non-collision share.
    struct QMeta {
        int gold = 0;
        QueryType type = QueryType::ADDRESS;
    };
    std::vector<QMeta> qmeta(static_cast<size_t>(spec.queries));
    for (int qi = 0; qi < spec.queries; ++qi) {
        int pi = static_cast<int>(query_rng.below(static_cast<uint64_t>(spec.pois)));
        if (meta[static_cast<size_t>(pi)].group >= 0 && pi % spec.collision_group_size == 0)
            pi += 1 + static_cast<int>(
                      query_rng.below(static_cast<uint64_t>(spec.collision_group_size - 1)));
        double tdraw = query_rng.uniform();
        QueryType type = tdraw < spec.address_fraction ? QueryType::ADDRESS
                         : tdraw < spec.address_fraction + spec.street_no_fraction
                             ? QueryType::STREET_NO
                             : QueryType::COLLOQUIAL;
        const PoiMeta& m = meta[static_cast<size_t>(pi)];
        const Poi& gold = bundle.pois[static_cast<size_t>(pi)];

        Query q;
        q.id = pad_id("q", qi, 5);
        q.query_type = type;
        q.gold = gold.id;
        switch (type) {
            case QueryType::ADDRESS:
                q.text = m.district + " " + m.road_name + " road " + m.name;
                break;
            case QueryType::STREET_NO:
                q.text = m.road_name + " road No." + std::to_string(m.number);
                break;
            case QueryType::COLLOQUIAL: {
                switch (query_rng.below(3)) {
                    case 0: q.text = "find " + m.name + " near " + m.district + " " + m.road_name + " rd"; break;
                    case 1: q.text = m.district + " " + m.road_name + " rd " + m.name + " please"; break;
                    default: q.text = "go to " + m.name + " on " + m.road_name + " rd in " + m.district; break;
                }
                break;
            }
        }
        // near_fraction of queries carry a device location (within 1 km of
        // the gold); the rest have none, and therefore no GC at all.
        if (query_rng.bernoulli(spec.near_fraction)) {
            double r = 1000.0 * std::sqrt(query_rng.uniform());
            double theta = query_rng.uniform(0.0, 2.0 * M_PI);
            q.location = GeoPoint{gold.location.lng + deg_lng(r * std::cos(theta), gold.location.lat),
                                  gold.location.lat + deg_lat(r * std::sin(theta))};
        }
        qmeta[static_cast<size_t>(qi)] = {pi, type};
        bundle.queries.push_back(std::move(q));
    }

    // Splits, then split-sized candidate slates: gold, every twin, random
    // fill, shuffled.
    std::vector<size_t> order(static_cast<size_t>(spec.queries));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    split_rng.shuffle(order);
    size_t n_train = static_cast<size_t>(spec.queries * spec.train_fraction);
    size_t n_dev = static_cast<size_t>(spec.queries * spec.dev_fraction);
    std::vector<int> split_of(order.size(), 2);
    for (size_t i = 0; i < order.size(); ++i)
        split_of[order[i]] = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);

    for (int qi = 0; qi < spec.queries; ++qi) {
        Query& q = bundle.queries[static_cast<size_t>(qi)];
        int gold_pi = qmeta[static_cast<size_t>(qi)].gold;
        const PoiMeta& gm = meta[static_cast<size_t>(gold_pi)];
        int target = split_of[static_cast<size_t>(qi)] == 0 ? spec.train_candidates
                                                            : spec.eval_candidates;
        std::set<int> chosen{gold_pi};
        if (gm.group >= 0) {
            int start = gm.group * spec.collision_group_size;
            for (int mb = 0; mb < spec.collision_group_size; ++mb)
                if (static_cast<int>(chosen.size()) < target) chosen.insert(start + mb);
        }
        while (static_cast<int>(chosen.size()) < target)
            chosen.insert(static_cast<int>(cand_rng.below(static_cast<uint64_t>(spec.pois))));
        std::vector<std::string> cands;
        cands.reserve(chosen.size());
        for (int pi : chosen) cands.push_back(bundle.pois[static_cast<size_t>(pi)].id);
        cand_rng.shuffle(cands);
        q.candidates = std::move(cands);
    }

    const char* names[] = {"train", "dev", "test"};
    for (int s = 0; s < 3; ++s) {
        std::vector<std::string> ids;
        for (size_t qi = 0; qi < split_of.size(); ++qi)
            if (split_of[qi] == s) ids.push_back(bundle.queries[qi].id);
        std::sort(ids.begin(), ids.end());
        bundle.splits.emplace_back(names[s], std::move(ids));
    }
    bundle.rebuild_indexes();
    return bundle;
}

namespace {

std::set<std::string> token_set(const std::string& text) {
    auto toks = text::Tokenizer::split(text);
    return {toks.begin(), toks.end()};
}

int overlap(const std::set<std::string>& a, const std::set<std::string>& b) {
    int n = 0;
    for (const auto& t : a)
        if (b.count(t)) ++n;
    return n;
}

double oracle_recall1(const CorpusBundle& bundle, const std::string& split, bool use_location) {
    const auto& ids = bundle.split(split);
    if (ids.empty()) throw GenError("empty split: " + split);
    size_t hits = 0;
    for (const auto& qid : ids) {
        const Query& q = bundle.query(qid);
        auto q_toks = token_set(q.text);
        int best_overlap = -1;
        std::vector<std::string> tied;
        for (const auto& pid : q.candidates) {
            int ov = overlap(q_toks, token_set(bundle.poi(pid).text));
            if (ov > best_overlap) {
                best_overlap = ov;
                tied = {pid};
            } else if (ov == best_overlap) {
                tied.push_back(pid);
            }
        }
        std::string pick;
        if (use_location && q.location) {
            double best_d = std::numeric_limits<double>::infinity();
            for (const auto& pid : tied) {
                double d = haversine(*q.location, bundle.poi(pid).location);
                if (d < best_d || (d == best_d && pid < pick)) {
                    best_d = d;
                    pick = pid;
                }
            }
        } else {
            pick = *std::min_element(tied.begin(), tied.end());
        }
        if (pick == q.gold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(ids.size());
}

}  // namespace

double text_oracle_recall1(const CorpusBundle& bundle, const std::string& split) {
    return oracle_recall1(bundle, split, false);
}

double gc_oracle_recall1(const CorpusBundle& bundle, const std::string& split) {
    return oracle_recall1(bundle, split, true);
}

}  // namespace mgeo::gen
