#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mgeo/spatial.hpp"

namespace mgeo::gc {

using spatial::Rect;

struct GcConfig {
    int k = 10;                 // discretization factor; rel-pos codes in [0, 2k]
    int grid_n = 2000;          // map grid is grid_n x grid_n
    Rect map_bounds;            // entire map area
    int n_max = 20;             // max objects per record
    double radius = 1000.0;     // meters
    double line_eps = 5.0;      // meters; LINE coverage tolerance
    int id_vocab = 50021;       // hash buckets for object ids (OOV row is separate)

    void validate() const;
};

// Discrete feature codes for one nearby object. Side order everywhere:
// left, bottom, right, top.
struct ObjectFeatures {
    int object_id_code = 0;              // [0, id_vocab]; id_vocab = OOV
    int shape_code = 0;                  // 0 LINE, 1 POLYGON
    int relation_code = 0;               // 0 NEAR, 1 COVERED
    std::array<int, 4> rel_pos_codes{};  // each in [0, 2k]
    std::array<int, 4> grid_codes{};     // each in [0, grid_n-1]

    bool operator==(const ObjectFeatures&) const = default;
};

struct GCRecord {
    GeoPoint anchor;
    std::vector<ObjectFeatures> objects;  // nearest first

    bool operator==(const GCRecord&) const = default;
};

// Stable hash of an object id string into [0, id_vocab).
int hash_object_id(const std::string& id, int id_vocab);

// One side of the discretized relative position: sgn(offset) * min(k,
// floor(k * |offset| / span)) + k. Degenerate spans are widened to 1e-9 deg.
int relative_position_side(double coord, double side, double span, int k);

// All four sides against rect, in side order.
std::array<int, 4> relative_position(const GeoPoint& l, const Rect& rect, int k);

// Map scale factors: (width/N, height/N).
std::pair<double, double> map_scale(const Rect& map_bounds, int grid_n);

// Floored grid offsets of the rect sides, clamped into [0, grid_n-1].
std::array<int, 4> map_grid_position(const Rect& rect, std::pair<double, double> scale,
                                     const Rect& map_bounds, int grid_n);

// Full extraction: nearby objects -> per-object discrete features.
GCRecord extract_gc(const GeoPoint& l, const spatial::SpatialIndex& index, const GcConfig& cfg);

// GC cache file: one JSON record per line plus a header line carrying the
// config/corpus hash used to detect stale caches.
struct GcCache {
    std::string content_hash;
    std::unordered_map<std::string, GCRecord> records;
};

void save_gc_cache(const GcCache& cache, const std::vector<std::string>& order,
                   const std::string& path);
GcCache load_gc_cache(const std::string& path);

}  // namespace mgeo::gc
