#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mgeo {

struct GeoPoint {
    double lng = 0.0;  // degrees, [-180, 180]
    double lat = 0.0;  // degrees, [-90, 90]

    bool operator==(const GeoPoint&) const = default;
};

enum class Shape { LINE, POLYGON };

// A road (LINE) or region of interest (POLYGON). Polygons are closed
// implicitly: the last vertex connects back to the first.
struct GeoObject {
    std::string id;
    Shape shape = Shape::LINE;
    std::vector<GeoPoint> vertices;

    bool operator==(const GeoObject&) const = default;
};

struct Poi {
    std::string id;
    std::string text;  // name + address
    GeoPoint location;

    bool operator==(const Poi&) const = default;
};

enum class QueryType { ADDRESS, STREET_NO, COLLOQUIAL };

struct Query {
    std::string id;
    std::string text;
    std::optional<GeoPoint> location;
    QueryType query_type = QueryType::ADDRESS;
    std::vector<std::string> candidates;  // POI ids; gold is one of them when non-empty
    std::string gold;                     // POI id

    bool operator==(const Query&) const = default;
};

struct CorpusBundle {
    std::vector<GeoObject> objects;
    std::vector<Poi> pois;
    std::vector<Query> queries;
    // split name -> query ids; splits are disjoint over query ids
    std::vector<std::pair<std::string, std::vector<std::string>>> splits;

    std::unordered_map<std::string, size_t> object_index;
    std::unordered_map<std::string, size_t> poi_index;
    std::unordered_map<std::string, size_t> query_index;

    void rebuild_indexes();
    const Poi& poi(const std::string& id) const;
    const Query& query(const std::string& id) const;
    const std::vector<std::string>& split(const std::string& name) const;
};

struct CorpusPaths {
    std::string objects;  // objects.jl
    std::string pois;     // pois.jl
    std::string queries;  // queries.jl
    std::string splits;   // splits.jl

    static CorpusPaths in_dir(const std::string& dir);
};

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

const char* shape_name(Shape s);
Shape shape_from_name(const std::string& s);
const char* query_type_name(QueryType t);
QueryType query_type_from_name(const std::string& s);

// Validates coordinate bounds. Throws CorpusError on violation.
void validate_point(const GeoPoint& p, const std::string& context);
void validate_object(const GeoObject& o);

// Loads the four line-delimited files into a fully cross-referenced bundle.
// Rejects malformed lines (with line numbers), out-of-range coordinates and
// dangling id references.
CorpusBundle load_corpus(const CorpusPaths& paths);

// Deterministic serialization: identical bundles produce identical bytes.
void save_corpus(const CorpusBundle& bundle, const CorpusPaths& paths);

}  // namespace mgeo
