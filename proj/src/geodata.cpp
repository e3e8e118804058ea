#include "mgeo/geodata.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

namespace mgeo {

using nlohmann::json;

void CorpusBundle::rebuild_indexes() {
    object_index.clear();
    poi_index.clear();
    query_index.clear();
    for (size_t i = 0; i < objects.size(); ++i) object_index[objects[i].id] = i;
    for (size_t i = 0; i < pois.size(); ++i) poi_index[pois[i].id] = i;
    for (size_t i = 0; i < queries.size(); ++i) query_index[queries[i].id] = i;
}

const Poi& CorpusBundle::poi(const std::string& id) const {
    auto it = poi_index.find(id);
    if (it == poi_index.end()) throw CorpusError("unknown poi id: " + id);
    return pois[it->second];
}

const Query& CorpusBundle::query(const std::string& id) const {
    auto it = query_index.find(id);
    if (it == query_index.end()) throw CorpusError("unknown query id: " + id);
    return queries[it->second];
}

const std::vector<std::string>& CorpusBundle::split(const std::string& name) const {
    for (const auto& [n, ids] : splits)
        if (n == name) return ids;
    throw CorpusError("unknown split: " + name);
}

CorpusPaths CorpusPaths::in_dir(const std::string& dir) {
    auto join = [&](const char* f) { return (std::filesystem::path(dir) / f).string(); };
    return CorpusPaths{join("objects.jl"), join("pois.jl"), join("queries.jl"), join("splits.jl")};
}

const char* shape_name(Shape s) { return s == Shape::LINE ? "LINE" : "POLYGON"; }

Shape shape_from_name(const std::string& s) {
    if (s == "LINE") return Shape::LINE;
    if (s == "POLYGON") return Shape::POLYGON;
    throw CorpusError("unknown shape: " + s);
}

const char* query_type_name(QueryType t) {
    switch (t) {
        case QueryType::ADDRESS: return "ADDRESS";
        case QueryType::STREET_NO: return "STREET_NO";
        default: return "COLLOQUIAL";
    }
}

QueryType query_type_from_name(const std::string& s) {
    if (s == "ADDRESS") return QueryType::ADDRESS;
    if (s == "STREET_NO") return QueryType::STREET_NO;
    if (s == "COLLOQUIAL") return QueryType::COLLOQUIAL;
    throw CorpusError("unknown query type: " + s);
}

void validate_point(const GeoPoint& p, const std::string& context) {
    if (!std::isfinite(p.lng) || !std::isfinite(p.lat) || p.lng < -180.0 || p.lng > 180.0 ||
        p.lat < -90.0 || p.lat > 90.0) {
        throw CorpusError("coordinate out of range in " + context);
    }
}

void validate_object(const GeoObject& o) {
    size_t min_vertices = o.shape == Shape::LINE ? 2 : 3;
    if (o.vertices.size() < min_vertices) {
        throw CorpusError("object " + o.id + ": vertex count below shape minimum");
    }
    for (size_t i = 0; i < o.vertices.size(); ++i) {
        validate_point(o.vertices[i], "object " + o.id);
        if (i > 0 && o.vertices[i] == o.vertices[i - 1]) {
            throw CorpusError("object " + o.id + ": duplicate consecutive vertices");
        }
    }
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CorpusError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

json parse_line(const std::string& path, size_t lineno, const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw CorpusError("malformed line " + std::to_string(lineno) + " in " + path);
    }
    return j;
}

// Fetches a required field, reporting the line on failure.
const json& field(const json& j, const char* key, const std::string& path, size_t lineno) {
    auto it = j.find(key);
    if (it == j.end()) {
        throw CorpusError("malformed line " + std::to_string(lineno) + " in " + path +
                          ": missing field '" + key + "'");
    }
    return *it;
}

}  // namespace

CorpusBundle load_corpus(const CorpusPaths& paths) {
    CorpusBundle b;

    size_t lineno = 0;
    try {
        lineno = 0;
        for (const auto& line : read_lines(paths.objects)) {
            ++lineno;
            json j = parse_line(paths.objects, lineno, line);
            GeoObject o;
            o.id = field(j, "id", paths.objects, lineno).get<std::string>();
            o.shape = shape_from_name(field(j, "shape", paths.objects, lineno).get<std::string>());
            auto flat = field(j, "vertices", paths.objects, lineno).get<std::vector<double>>();
            if (flat.size() < 2 || flat.size() % 2 != 0) {
                throw CorpusError("malformed line " + std::to_string(lineno) + " in " +
                                  paths.objects + ": odd vertex list");
            }
            for (size_t i = 0; i + 1 < flat.size(); i += 2) {
                o.vertices.push_back({flat[i], flat[i + 1]});
            }
            // Normalize an explicitly closed polygon: drop the repeated last vertex.
            if (o.shape == Shape::POLYGON && o.vertices.size() > 3 &&
                o.vertices.front() == o.vertices.back()) {
                o.vertices.pop_back();
            }
            validate_object(o);
            if (!b.object_index.emplace(o.id, b.objects.size()).second) {
                throw CorpusError("duplicate object id " + o.id);
            }
            b.objects.push_back(std::move(o));
        }

        lineno = 0;
        for (const auto& line : read_lines(paths.pois)) {
            ++lineno;
            json j = parse_line(paths.pois, lineno, line);
            Poi p;
            p.id = field(j, "id", paths.pois, lineno).get<std::string>();
            p.text = field(j, "text", paths.pois, lineno).get<std::string>();
            p.location.lng = field(j, "lng", paths.pois, lineno).get<double>();
            p.location.lat = field(j, "lat", paths.pois, lineno).get<double>();
            validate_point(p.location, "poi " + p.id);
            if (p.text.empty()) throw CorpusError("poi " + p.id + ": empty text");
            if (!b.poi_index.emplace(p.id, b.pois.size()).second) {
                throw CorpusError("duplicate poi id " + p.id);
            }
            b.pois.push_back(std::move(p));
        }

        lineno = 0;
        for (const auto& line : read_lines(paths.queries)) {
            ++lineno;
            json j = parse_line(paths.queries, lineno, line);
            Query q;
            q.id = field(j, "id", paths.queries, lineno).get<std::string>();
            q.text = field(j, "text", paths.queries, lineno).get<std::string>();
            if (q.text.empty()) throw CorpusError("query " + q.id + ": empty text");
            if (j.contains("lng") != j.contains("lat")) {
                throw CorpusError("malformed line " + std::to_string(lineno) + " in " +
                                  paths.queries + ": lng/lat must appear together");
            }
            if (j.contains("lng")) {
                GeoPoint loc{j["lng"].get<double>(), j["lat"].get<double>()};
                validate_point(loc, "query " + q.id);
                q.location = loc;
            }
            q.query_type =
                query_type_from_name(field(j, "type", paths.queries, lineno).get<std::string>());
            q.candidates =
                field(j, "candidates", paths.queries, lineno).get<std::vector<std::string>>();
            q.gold = field(j, "gold", paths.queries, lineno).get<std::string>();

            if (!b.poi_index.count(q.gold)) {
                throw CorpusError("query " + q.id + ": dangling reference, gold poi " + q.gold);
            }
            bool gold_listed = false;
            for (const auto& cid : q.candidates) {
                if (!b.poi_index.count(cid)) {
                    throw CorpusError("query " + q.id + ": dangling reference, candidate poi " +
                                      cid);
                }
                gold_listed |= cid == q.gold;
            }
            if (!q.candidates.empty() && !gold_listed) {
                throw CorpusError("query " + q.id + ": gold not in candidates");
            }
            if (!b.query_index.emplace(q.id, b.queries.size()).second) {
                throw CorpusError("duplicate query id " + q.id);
            }
            b.queries.push_back(std::move(q));
        }

        lineno = 0;
        std::unordered_set<std::string> assigned;
        for (const auto& line : read_lines(paths.splits)) {
            ++lineno;
            json j = parse_line(paths.splits, lineno, line);
            std::string name = field(j, "split", paths.splits, lineno).get<std::string>();
            auto ids = field(j, "queries", paths.splits, lineno).get<std::vector<std::string>>();
            for (const auto& qid : ids) {
                if (!b.query_index.count(qid)) {
                    throw CorpusError("split " + name + ": dangling reference, query " + qid);
                }
                if (!assigned.insert(qid).second) {
                    throw CorpusError("split " + name + ": query " + qid +
                                      " appears in multiple splits");
                }
            }
            b.splits.emplace_back(std::move(name), std::move(ids));
        }
    } catch (const json::exception& e) {
        throw CorpusError(std::string("malformed record: ") + e.what());
    }

    return b;
}

namespace {

// Shortest round-trip double formatting (what json::dump emits for numbers);
// exact reload and byte-deterministic re-save.
json coord(double v) { return json(v); }

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("unwritable destination: " + path);
    for (const auto& l : lines) {
        out << l << '\n';
    }
    if (!out) throw CorpusError("write failed: " + path);
}

}  // namespace

void save_corpus(const CorpusBundle& b, const CorpusPaths& paths) {
    std::vector<std::string> lines;

    lines.clear();
    for (const auto& o : b.objects) {
        json flat = json::array();
        for (const auto& v : o.vertices) {
            flat.push_back(coord(v.lng));
            flat.push_back(coord(v.lat));
        }
        json j{{"id", o.id}, {"shape", shape_name(o.shape)}, {"vertices", std::move(flat)}};
        lines.push_back(j.dump());
    }
    write_lines(paths.objects, lines);

    lines.clear();
    for (const auto& p : b.pois) {
        json j{{"id", p.id}, {"text", p.text}, {"lng", coord(p.location.lng)},
               {"lat", coord(p.location.lat)}};
        lines.push_back(j.dump());
    }
    write_lines(paths.pois, lines);

    lines.clear();
    for (const auto& q : b.queries) {
        json j{{"id", q.id},
               {"text", q.text},
               {"type", query_type_name(q.query_type)},
               {"candidates", q.candidates},
               {"gold", q.gold}};
        if (q.location) {
            j["lng"] = coord(q.location->lng);
            j["lat"] = coord(q.location->lat);
        }
        lines.push_back(j.dump());
    }
    write_lines(paths.queries, lines);

    lines.clear();
    for (const auto& [name, ids] : b.splits) {
        json j{{"split", name}, {"queries", ids}};
        lines.push_back(j.dump());
    }
    write_lines(paths.splits, lines);
}

}  // namespace mgeo
