#include "mgeo/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mgeo::spatial {

namespace {

constexpr double kDegToRad = M_PI / 180.0;
// Meters per degree of latitude on the fixed-radius sphere.
constexpr double kMetersPerDegree = kEarthRadiusMeters * kDegToRad;

double clamp01(double t) { return t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t); }

}  // namespace

double haversine(const GeoPoint& a, const GeoPoint& b) {
    double lat1 = a.lat * kDegToRad;
    double lat2 = b.lat * kDegToRad;
    double dlat = (b.lat - a.lat) * kDegToRad;
    double dlng = (b.lng - a.lng) * kDegToRad;
    double u = std::sin(dlat / 2.0);
    double v = std::sin(dlng / 2.0);
    double s = u * u + std::cos(lat1) * std::cos(lat2) * v * v;
    s = std::min(1.0, std::max(0.0, s));
    return 2.0 * kEarthRadiusMeters * std::asin(std::sqrt(s));
}

Rect bounding_rect(const GeoObject& o) {
    Rect r{o.vertices[0].lng, o.vertices[0].lat, o.vertices[0].lng, o.vertices[0].lat};
    for (const auto& v : o.vertices) {
        r.left = std::min(r.left, v.lng);
        r.right = std::max(r.right, v.lng);
        r.bottom = std::min(r.bottom, v.lat);
        r.top = std::max(r.top, v.lat);
    }
    return r;
}

namespace {

bool on_segment(const GeoPoint& p, const GeoPoint& a, const GeoPoint& b) {
    double cross = (b.lng - a.lng) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lng - a.lng);
    if (cross != 0.0) return false;
    return p.lng >= std::min(a.lng, b.lng) && p.lng <= std::max(a.lng, b.lng) &&
           p.lat >= std::min(a.lat, b.lat) && p.lat <= std::max(a.lat, b.lat);
}

}  // namespace

bool point_in_polygon(const GeoPoint& l, const GeoObject& o) {
    if (o.shape != Shape::POLYGON) throw CorpusError("point_in_polygon: shape mismatch");
    const auto& v = o.vertices;
    size_t n = v.size();

    for (size_t i = 0; i < n; ++i) {
        if (on_segment(l, v[i], v[(i + 1) % n])) return true;
    }

    // Even-odd rule, ray cast toward +lng.
    bool inside = false;
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        bool straddles = (v[i].lat > l.lat) != (v[j].lat > l.lat);
        if (straddles) {
            double x = v[j].lng + (l.lat - v[j].lat) / (v[i].lat - v[j].lat) * (v[i].lng - v[j].lng);
            if (l.lng < x) inside = !inside;
        }
    }
    return inside;
}

namespace {

// Closest point to l on segment a-b, computed in a local equirectangular
// plane centered at l, then measured back on the sphere.
double point_to_segment_distance(const GeoPoint& l, const GeoPoint& a, const GeoPoint& b) {
    double cos_lat = std::cos(l.lat * kDegToRad);
    double ax = (a.lng - l.lng) * cos_lat, ay = a.lat - l.lat;
    double bx = (b.lng - l.lng) * cos_lat, by = b.lat - l.lat;
    double dx = bx - ax, dy = by - ay;
    double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? clamp01(-(ax * dx + ay * dy) / len2) : 0.0;
    GeoPoint nearest{a.lng + t * (b.lng - a.lng), a.lat + t * (b.lat - a.lat)};
    return haversine(l, nearest);
}

}  // namespace

double point_to_object_distance(const GeoPoint& l, const GeoObject& o) {
    if (o.shape == Shape::POLYGON && point_in_polygon(l, o)) return 0.0;
    const auto& v = o.vertices;
    size_t n = v.size();
    size_t segments = o.shape == Shape::POLYGON ? n : n - 1;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < segments; ++i) {
        best = std::min(best, point_to_segment_distance(l, v[i], v[(i + 1) % n]));
    }
    return best;
}

RelationType relation_type(const GeoPoint& l, const GeoObject& o, double line_eps) {
    if (o.shape == Shape::POLYGON) {
        return point_in_polygon(l, o) ? RelationType::COVERED : RelationType::NEAR;
    }
    return point_to_object_distance(l, o) <= line_eps ? RelationType::COVERED
                                                      : RelationType::NEAR;
}

SpatialIndex::SpatialIndex(std::vector<GeoObject> objects, SpatialIndexConfig cfg)
    : objects_(std::move(objects)), cfg_(cfg) {
    rects_.reserve(objects_.size());
    for (size_t i = 0; i < objects_.size(); ++i) {
        Rect r = bounding_rect(objects_[i]);
        rects_.push_back(r);
        CellKey lo = cell_of(r.left, r.bottom);
        CellKey hi = cell_of(r.right, r.top);
        for (int32_t x = lo.x; x <= hi.x; ++x) {
            for (int32_t y = lo.y; y <= hi.y; ++y) {
                cells_[CellKey{x, y}].push_back(i);
            }
        }
    }
}

SpatialIndex::CellKey SpatialIndex::cell_of(double lng, double lat) const {
    return CellKey{static_cast<int32_t>(std::floor(lng / cfg_.cell_size_deg)),
                   static_cast<int32_t>(std::floor(lat / cfg_.cell_size_deg))};
}

namespace {

Relation relation_of(const GeoPoint& l, const GeoObject& o, size_t idx, double line_eps) {
    double d = point_to_object_distance(l, o);
    bool covered = o.shape == Shape::POLYGON ? d == 0.0 : d <= line_eps;
    return Relation{idx, covered ? RelationType::COVERED : RelationType::NEAR,
                    covered ? 0.0 : d};
}

}  // namespace

std::vector<Relation> SpatialIndex::rank(const GeoPoint&, std::vector<Relation> hits,
                                         size_t n) const {
    std::sort(hits.begin(), hits.end(), [&](const Relation& a, const Relation& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return objects_[a.object_idx].id < objects_[b.object_idx].id;
    });
    if (hits.size() > n) hits.resize(n);
    return hits;
}

std::vector<Relation> SpatialIndex::nearby_objects(const GeoPoint& l, size_t n,
                                                   double radius) const {
    // lng/lat box guaranteed to contain the great-circle disc of `radius`.
    double dlat = radius / kMetersPerDegree;
    double far_lat = std::min(89.999, std::fabs(l.lat) + dlat);
    double cos_far = std::max(1e-6, std::cos(far_lat * kDegToRad));
    double dlng = radius / (kMetersPerDegree * cos_far);
    const double eps = 1e-9;

    CellKey lo = cell_of(l.lng - dlng - eps, l.lat - dlat - eps);
    CellKey hi = cell_of(l.lng + dlng + eps, l.lat + dlat + eps);

    std::vector<char> seen(objects_.size(), 0);
    std::vector<Relation> hits;
    for (int32_t x = lo.x; x <= hi.x; ++x) {
        for (int32_t y = lo.y; y <= hi.y; ++y) {
            auto it = cells_.find(CellKey{x, y});
            if (it == cells_.end()) continue;
            for (size_t idx : it->second) {
                if (seen[idx]) continue;
                seen[idx] = 1;
                Relation r = relation_of(l, objects_[idx], idx, cfg_.line_eps);
                if (r.distance <= radius) hits.push_back(r);
            }
        }
    }
    return rank(l, std::move(hits), n);
}

std::vector<Relation> SpatialIndex::nearby_objects_bruteforce(const GeoPoint& l, size_t n,
                                                              double radius) const {
    std::vector<Relation> hits;
    for (size_t idx = 0; idx < objects_.size(); ++idx) {
        Relation r = relation_of(l, objects_[idx], idx, cfg_.line_eps);
        if (r.distance <= radius) hits.push_back(r);
    }
    return rank(l, std::move(hits), n);
}

}  // namespace mgeo::spatial
