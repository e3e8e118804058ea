#include "mgeo/gcfeat.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "mgeo/rng.hpp"

namespace mgeo::gc {

using nlohmann::json;

void GcConfig::validate() const {
    if (k < 1) throw CorpusError("GcConfig: k must be >= 1");
    if (grid_n < 1) throw CorpusError("GcConfig: grid_n must be >= 1");
    if (n_max < 1) throw CorpusError("GcConfig: n_max must be >= 1");
    if (id_vocab < 1) throw CorpusError("GcConfig: id_vocab must be >= 1");
    if (map_bounds.width() <= 0.0 || map_bounds.height() <= 0.0) {
        throw CorpusError("GcConfig: degenerate map_bounds");
    }
}

int hash_object_id(const std::string& id, int id_vocab) {
    return static_cast<int>(fnv1a64(id) % static_cast<uint64_t>(id_vocab));
}

namespace {

int sgn(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

constexpr double kMinSpanDeg = 1e-9;

}  // namespace

int relative_position_side(double coord, double side, double span, int k) {
    double denom = std::max(span, kMinSpanDeg);
    double off = coord - side;
    double ratio = static_cast<double>(k) * std::fabs(off) / denom;
    int capped = static_cast<int>(std::min(static_cast<double>(k), std::floor(ratio)));
    return sgn(off) * capped + k;
}

std::array<int, 4> relative_position(const GeoPoint& l, const Rect& rect, int k) {
    double w = rect.width(), h = rect.height();
    return {relative_position_side(l.lng, rect.left, w, k),
            relative_position_side(l.lat, rect.bottom, h, k),
            relative_position_side(l.lng, rect.right, w, k),
            relative_position_side(l.lat, rect.top, h, k)};
}

std::pair<double, double> map_scale(const Rect& map_bounds, int grid_n) {
    if (map_bounds.width() <= 0.0 || map_bounds.height() <= 0.0) {
        throw CorpusError("map_scale: degenerate map bounds");
    }
    return {map_bounds.width() / grid_n, map_bounds.height() / grid_n};
}

namespace {

int grid_code(double coord, double origin, double scale, int grid_n) {
    int c = static_cast<int>(std::floor((coord - origin) / scale));
    return std::min(grid_n - 1, std::max(0, c));
}

}  // namespace

std::array<int, 4> map_grid_position(const Rect& rect, std::pair<double, double> scale,
                                     const Rect& map_bounds, int grid_n) {
    auto [s_lng, s_lat] = scale;
    return {grid_code(rect.left, map_bounds.left, s_lng, grid_n),
            grid_code(rect.bottom, map_bounds.bottom, s_lat, grid_n),
            grid_code(rect.right, map_bounds.left, s_lng, grid_n),
            grid_code(rect.top, map_bounds.bottom, s_lat, grid_n)};
}

GCRecord extract_gc(const GeoPoint& l, const spatial::SpatialIndex& index, const GcConfig& cfg) {
    cfg.validate();
    auto scale = map_scale(cfg.map_bounds, cfg.grid_n);
    auto relations = index.nearby_objects(l, static_cast<size_t>(cfg.n_max), cfg.radius);

    GCRecord rec;
    rec.anchor = l;
    rec.objects.reserve(relations.size());
    for (const auto& rel : relations) {
        const GeoObject& obj = index.object(rel.object_idx);
        const Rect& rect = index.rect(rel.object_idx);
        ObjectFeatures f;
        f.object_id_code = hash_object_id(obj.id, cfg.id_vocab);
        f.shape_code = obj.shape == Shape::LINE ? 0 : 1;
        f.relation_code = rel.type == spatial::RelationType::NEAR ? 0 : 1;
        f.rel_pos_codes = relative_position(l, rect, cfg.k);
        f.grid_codes = map_grid_position(rect, scale, cfg.map_bounds, cfg.grid_n);
        rec.objects.push_back(f);
    }
    return rec;
}

void save_gc_cache(const GcCache& cache, const std::vector<std::string>& order,
                   const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("unwritable destination: " + path);
    out << json{{"gc_cache_hash", cache.content_hash}}.dump() << '\n';
    for (const auto& id : order) {
        const GCRecord& rec = cache.records.at(id);
        json objs = json::array();
        for (const auto& f : rec.objects) {
            objs.push_back(json{{"id_code", f.object_id_code},
                                {"shape", f.shape_code},
                                {"rel", f.relation_code},
                                {"pos", f.rel_pos_codes},
                                {"grid", f.grid_codes}});
        }
        json j{{"id", id},
               {"anchor", {rec.anchor.lng, rec.anchor.lat}},
               {"objects", std::move(objs)}};
        out << j.dump() << '\n';
    }
    if (!out) throw CorpusError("write failed: " + path);
}

GcCache load_gc_cache(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open " + path);
    GcCache cache;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw CorpusError("malformed line " + std::to_string(lineno) + " in " + path);
        }
        if (lineno == 1) {
            cache.content_hash = j.at("gc_cache_hash").get<std::string>();
            continue;
        }
        GCRecord rec;
        auto anchor = j.at("anchor").get<std::vector<double>>();
        rec.anchor = {anchor.at(0), anchor.at(1)};
        for (const auto& oj : j.at("objects")) {
            ObjectFeatures f;
            f.object_id_code = oj.at("id_code").get<int>();
            f.shape_code = oj.at("shape").get<int>();
            f.relation_code = oj.at("rel").get<int>();
            f.rel_pos_codes = oj.at("pos").get<std::array<int, 4>>();
            f.grid_codes = oj.at("grid").get<std::array<int, 4>>();
            rec.objects.push_back(f);
        }
        cache.records.emplace(j.at("id").get<std::string>(), std::move(rec));
    }
    return cache;
}

}  // namespace mgeo::gc
