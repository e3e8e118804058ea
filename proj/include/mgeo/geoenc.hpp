#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mgeo/gcfeat.hpp"
#include "mgeo/nn/optimizer.hpp"
#include "mgeo/nn/tape.hpp"
#include "mgeo/nn/transformer.hpp"
#include "mgeo/rng.hpp"

namespace mgeo::geoenc {

// The eleven discrete feature families each object contributes: relation,
// shape, hashed id, four relative-position sides, four grid sides.
enum Family : int {
    FAM_RELATION = 0,
    FAM_SHAPE,
    FAM_ID,
    FAM_REL_POS_LEFT,
    FAM_REL_POS_BOTTOM,
    FAM_REL_POS_RIGHT,
    FAM_REL_POS_TOP,
    FAM_GRID_LEFT,
    FAM_GRID_BOTTOM,
    FAM_GRID_RIGHT,
    FAM_GRID_TOP,
    FAM_COUNT
};

const char* family_name(int family);

struct GeoEncoderConfig {
    gc::GcConfig gc;
    nn::TransformerConfig trunk;

    // Number of valid (predictable) codes per family. Embedding tables hold
    // one extra MASK row beyond this; the id family also carries an
    // out-of-vocabulary row among its valid codes.
    int family_vocab(int family) const;
    int mask_code(int family) const { return family_vocab(family); }
    void validate() const;
};

// Codes in family order, directly embeddable (MASK rows addressable).
struct ObjectCodes {
    std::array<int, FAM_COUNT> code{};

    bool operator==(const ObjectCodes&) const = default;
};

ObjectCodes codes_from_features(const gc::ObjectFeatures& f);
std::vector<ObjectCodes> codes_from_record(const gc::GCRecord& rec);

// Whole-object masking plan: selected objects are predicted; each selected
// object is wholly replaced by MASK rows (80%), random valid codes (10%), or
// kept (10%), so no family can leak the masked identity.
struct MaskPlan {
    std::vector<ObjectCodes> masked;  // model inputs
    std::vector<int> selected;        // indices into the original list
    int n_mask = 0, n_random = 0, n_keep = 0;
};

MaskPlan plan_object_mask(const std::vector<ObjectCodes>& objects, const GeoEncoderConfig& cfg,
                          double mask_prob, Rng& rng);

class GeoEncoder {
public:
    GeoEncoder(GeoEncoderConfig cfg, uint64_t seed);

    const GeoEncoderConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return ps_; }
    const nn::ParameterStore& params() const { return ps_; }

    // Sum of the eleven family embeddings per object (n x hidden).
    int embed_objects(nn::Tape& tape, const std::vector<ObjectCodes>& objects);
    // Full encode: prepended GC token, embedding layer norm, trunk. Output is
    // (1 + n) x hidden with the GC-token state in row 0.
    int encode(nn::Tape& tape, const std::vector<ObjectCodes>& objects);
    // Value-only encode on a scratch tape (for the frozen-encoder stages).
    nn::Mat encode_values(const std::vector<ObjectCodes>& objects);

    // Per-family classification loss over the selected objects of each plan,
    // given the encode() outputs for the masked inputs. Sums the family
    // losses per object and averages over the number of selected objects
    // across the batch; returns a zero constant when nothing is selected.
    int mgm_loss(nn::Tape& tape, const std::vector<int>& encoded,
                 const std::vector<MaskPlan>& plans,
                 const std::vector<std::vector<ObjectCodes>>& originals);

    // KL alignment of latent GC-token similarities with geographic pairwise
    // distances. Returns nullopt (to be skipped and logged) when all pairwise
    // distances are equal and the z-score is undefined.
    std::optional<int> gcl_loss(nn::Tape& tape, const std::vector<int>& encoded,
                                const std::vector<GeoPoint>& anchors);

private:
    GeoEncoderConfig cfg_;
    nn::ParameterStore ps_;
};

// Distance-target matrix of the contrastive loss: pairwise haversine
// distances, z-scored over the off-diagonal entries, negated, passed through
// the logistic sigmoid. Diagonal entries are left at 0 and excluded by
// pair_mask downstream. nullopt when the off-diagonal distances have zero
// variance. Exposed for oracle tests.
std::optional<nn::Mat> build_geo_target(const std::vector<GeoPoint>& anchors);
std::vector<unsigned char> offdiag_mask(int n);

struct GeoTrainConfig {
    int epochs = 8;
    int batch_size = 32;
    double mask_prob = 0.15;
    nn::AdamWConfig opt;
};

struct TraceRow {
    int step;
    double mgm;
    double gcl;
};

// Round-based training on a set of GC records; records the per-step loss
// trace and leaves the final (last-epoch) weights in the encoder. Batches
// shuffle per epoch from a named stream; a trailing batch of size 1 is
// dropped (pairwise loss needs at least two anchors). Non-finite losses
// abort with diagnostics.
std::vector<TraceRow> train_geo_encoder(GeoEncoder& enc, const std::vector<gc::GCRecord>& records,
                                        const GeoTrainConfig& tc, uint64_t seed);

void save_trace(const std::vector<TraceRow>& trace, const std::string& path);

}  // namespace mgeo::geoenc
