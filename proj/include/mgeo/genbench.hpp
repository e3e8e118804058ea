#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "mgeo/geodata.hpp"
#include "mgeo/spatial.hpp"

namespace mgeo::gen {

// Synthetic city blueprint. Collision POIs share a byte-identical description
// with `collision_group_size - 1` twins attached to same-named roads in
// well-separated zones, so text alone cannot rank them; queries carry the
// gold's district name and (for a near_fraction share) a location within 1 km
// of the gold, which only geography-aware models can exploit.
struct GenSpec {
    spatial::Rect city{120.0, 30.0, 120.2, 30.2};
    int roads = 40;
    int polygons = 60;
    int pois = 500;
    int queries = 2000;
    double address_fraction = 0.90;
    double street_no_fraction = 0.07;  // colloquial takes the remainder
    double collision_rate = 0.4;
    int collision_group_size = 8;
    double near_fraction = 0.5;
    int train_candidates = 20;
    int eval_candidates = 40;
    double train_fraction = 0.70;
    double dev_fraction = 0.15;  // test takes the remainder
    uint64_t seed = 17;

    void validate() const;
};

class GenError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

CorpusBundle generate_benchmark(const GenSpec& spec);

// Scripted construction oracles: rank candidates by shared-token count with
// the query. The text oracle resolves ties by lowest POI id; the GC-aware
// oracle resolves the tied set by distance to the query location.
double text_oracle_recall1(const CorpusBundle& bundle, const std::string& split);
double gc_oracle_recall1(const CorpusBundle& bundle, const std::string& split);

}  // namespace mgeo::gen
