#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "mgeo/gcfeat.hpp"
#include "mgeo/genbench.hpp"
#include "mgeo/geoenc.hpp"
#include "mgeo/interaction.hpp"
#include "mgeo/nn/transformer.hpp"

namespace mgeo::cfg {

// Everything a run needs, resolved up front. A serialized copy lands in every
// output directory so any artifact can be reproduced from the file next to it.
struct RunConfig {
    uint64_t seed = 17;
    std::string profile = "desk";

    gen::GenSpec gen;
    gc::GcConfig gc;  // map_bounds is resolved from the corpus during extraction
    nn::TransformerConfig geo_trunk;
    nn::TransformerConfig mm_trunk;
    geoenc::GeoTrainConfig geo_train;
    mm::PretrainConfig mm_pretrain;
    mm::FinetuneConfig ft_bi;
    mm::FinetuneConfig ft_cross;

    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// "desk": 2-layer/64-hidden trunks and a 500-POI blueprint sized for
// minutes-scale CPU runs. "paper": 4-layer/256-hidden trunks with the full
// 2000x2000 grid and 50k-id vocabulary. Unknown names throw ConfigError.
RunConfig make_profile(const std::string& name);

// Canonical serialization: keys sorted, shortest round-trip numbers. Equal
// configs produce equal bytes.
std::string canonical_json(const RunConfig& rc);
// 16 lowercase hex digits of the FNV-1a hash of canonical_json.
std::string config_hash(const RunConfig& rc);

void save_runconfig(const RunConfig& rc, const std::string& path);
RunConfig load_runconfig(const std::string& path);
RunConfig runconfig_from_json_text(const std::string& text);

}  // namespace mgeo::cfg
