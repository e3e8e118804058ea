#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "mgeo/geodata.hpp"

namespace mgeo::spatial {

constexpr double kEarthRadiusMeters = 6371000.0;

// Axis-aligned bounding rectangle in lng/lat degrees.
struct Rect {
    double left = 0, bottom = 0, right = 0, top = 0;

    double width() const { return right - left; }
    double height() const { return top - bottom; }
    bool operator==(const Rect&) const = default;
};

enum class RelationType { NEAR, COVERED };

struct Relation {
    size_t object_idx = 0;         // index into the index's object store
    RelationType type = RelationType::NEAR;
    double distance = 0.0;         // meters; 0 when COVERED
};

// Great-circle distance on a fixed-radius sphere, in meters.
double haversine(const GeoPoint& a, const GeoPoint& b);

// Min/max of vertex longitudes/latitudes.
Rect bounding_rect(const GeoObject& o);

// Even-odd ray casting in the lng/lat plane; boundary points count as inside.
// Requires o.shape == POLYGON.
bool point_in_polygon(const GeoPoint& l, const GeoObject& o);

// 0 when l is covered by a polygon o; otherwise the minimum haversine
// distance from l to any segment of o. Segment projection runs in a local
// equirectangular plane centered at l.
double point_to_object_distance(const GeoPoint& l, const GeoObject& o);

// POLYGON: COVERED iff point_in_polygon. LINE: COVERED iff distance <= line_eps.
RelationType relation_type(const GeoPoint& l, const GeoObject& o, double line_eps);

struct SpatialIndexConfig {
    double cell_size_deg = 0.01;  // ~1.1 km
    double line_eps = 5.0;        // meters; LINE coverage tolerance
};

// Uniform lng/lat grid over object bounding rectangles. Built once, then
// immutable; concurrent queries need no synchronization.
class SpatialIndex {
public:
    explicit SpatialIndex(std::vector<GeoObject> objects, SpatialIndexConfig cfg = {});

    const std::vector<GeoObject>& objects() const { return objects_; }
    const GeoObject& object(size_t idx) const { return objects_[idx]; }
    const Rect& rect(size_t idx) const { return rects_[idx]; }
    const SpatialIndexConfig& config() const { return cfg_; }
    size_t size() const { return objects_.size(); }

    // At most n relations with distance <= radius, ascending by distance,
    // ties broken by object id; COVERED objects sort first at distance 0.
    std::vector<Relation> nearby_objects(const GeoPoint& l, size_t n, double radius) const;

    // Exhaustive reference scan with identical ordering; used by tests and
    // as the fallback for degenerate configurations.
    std::vector<Relation> nearby_objects_bruteforce(const GeoPoint& l, size_t n,
                                                    double radius) const;

private:
    struct CellKey {
        int32_t x, y;
        bool operator==(const CellKey&) const = default;
    };
    struct CellKeyHash {
        size_t operator()(const CellKey& k) const {
            return std::hash<uint64_t>()((static_cast<uint64_t>(static_cast<uint32_t>(k.x)) << 32) |
                                         static_cast<uint32_t>(k.y));
        }
    };

    CellKey cell_of(double lng, double lat) const;
    std::vector<Relation> rank(const GeoPoint& l, std::vector<Relation> hits, size_t n) const;

    std::vector<GeoObject> objects_;
    std::vector<Rect> rects_;
    SpatialIndexConfig cfg_;
    std::unordered_map<CellKey, std::vector<size_t>, CellKeyHash> cells_;
};

}  // namespace mgeo::spatial
