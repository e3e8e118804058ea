#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mgeo/geodata.hpp"
#include "mgeo/geoenc.hpp"
#include "mgeo/nn/optimizer.hpp"
#include "mgeo/nn/tape.hpp"
#include "mgeo/nn/transformer.hpp"
#include "mgeo/tokenizer.hpp"

namespace mgeo::mm {

enum class Role : int { QUERY = 0, POI = 1 };
enum class PretrainTask : int { MLM_SINGLE = 0, MLM_MULTI = 1, MGM_MULTI = 2 };
constexpr int kPretrainTaskCount = 3;
const char* pretrain_task_name(PretrainTask t);

enum class Head { BI, CROSS };
const char* head_name(Head h);

struct InteractionConfig {
    int text_vocab = 0;
    nn::TransformerConfig trunk;
    geoenc::GeoEncoderConfig geo;  // sizes of the frozen geographic side
    void validate() const;
};

// One geographic segment appended after the text: the frozen encoder's
// per-object outputs plus the role's discriminator row. Absent GC means no
// segment at all, not a zero segment.
struct GcSegment {
    Role role;
    nn::Mat values;  // n x hidden, object states only
};

// Masking plan for text tokens: positions of selected (predictable) tokens
// with their original ids; specials are never selected.
struct TextMaskPlan {
    std::vector<int> masked_tokens;
    std::vector<int> positions;
    std::vector<int> targets;
    int n_mask = 0, n_random = 0, n_keep = 0;
};

TextMaskPlan plan_text_mask(const std::vector<int>& tokens, int vocab_size, double mask_prob,
                            Rng& rng);

struct PretrainExample {
    std::vector<int> body_tokens;            // no specials
    std::vector<geoenc::ObjectCodes> codes;  // geographic context of the entity
    Role role = Role::POI;                   // discriminator row of the GC segment
};

class InteractionModel {
public:
    InteractionModel(InteractionConfig cfg, uint64_t seed);

    const InteractionConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return ps_; }
    const nn::ParameterStore& params() const { return ps_; }

    // Sequence assembly: single tower [CLS] body [SEP] (segment 0) or joint
    // [CLS] q [SEP] p [SEP] (segments 0/0.../0, 1.../1).
    static void tokens_single(const std::vector<int>& body, std::vector<int>& tokens,
                              std::vector<int>& segments);
    static void tokens_pair(const std::vector<int>& q_body, const std::vector<int>& p_body,
                            std::vector<int>& tokens, std::vector<int>& segments);

    // Word+position+segment embeddings for the text, frozen GC vectors plus
    // discriminator rows appended, one shared layer norm, then the trunk.
    // Output is (T + sum n_i) x hidden.
    int forward(nn::Tape& tape, const std::vector<int>& tokens, const std::vector<int>& segments,
                const std::vector<GcSegment>& gc);

    // CLS state of a single tower (first text position).
    int tower_cls(nn::Tape& tape, const std::vector<int>& body, Role role, const nn::Mat* gc);

    // Cosine of the two tower CLS states.
    int bi_score_node(nn::Tape& tape, const std::vector<int>& q_body, const nn::Mat* q_gc,
                      const std::vector<int>& p_body, const nn::Mat* p_gc);
    double bi_score(const std::vector<int>& q_body, const nn::Mat* q_gc,
                    const std::vector<int>& p_body, const nn::Mat* p_gc);

    // Joint forward scored by the similarity MLP over the CLS state.
    int cross_score_node(nn::Tape& tape, const std::vector<int>& q_body, const nn::Mat* q_gc,
                         const std::vector<int>& p_body, const nn::Mat* p_gc);
    double cross_score(const std::vector<int>& q_body, const nn::Mat* q_gc,
                       const std::vector<int>& p_body, const nn::Mat* p_gc);

private:
    InteractionConfig cfg_;
    nn::ParameterStore ps_;
};

struct PretrainStats {
    int selected = 0;
    int n_mask = 0, n_random = 0, n_keep = 0;
};

// Loss of one pre-training task over a batch. MLM_SINGLE masks text and drops
// the GC segment entirely; MLM_MULTI masks text with GC visible; MGM_MULTI
// masks the geographic codes before the frozen encoder with text visible.
// Mean over predicted positions (objects for MGM); zero constant when nothing
// is selected.
int pretrain_loss(nn::Tape& tape, InteractionModel& model, geoenc::GeoEncoder& frozen,
                  const std::vector<const PretrainExample*>& batch, PretrainTask task,
                  double mask_prob, Rng& rng, PretrainStats* stats = nullptr);

struct PretrainConfig {
    int epochs = 6;
    int batch_size = 16;
    double mask_prob = 0.15;
    nn::AdamWConfig opt;
};

struct PretrainTraceRow {
    int step;
    PretrainTask task;
    double loss;
};

// Cycles the three tasks per batch in fixed order. Returns the per-step
// trace; the model holds the last-epoch weights.
std::vector<PretrainTraceRow> pretrain_round_robin(InteractionModel& model,
                                                   geoenc::GeoEncoder& frozen,
                                                   const std::vector<PretrainExample>& corpus,
                                                   const PretrainConfig& pc, uint64_t seed);

void save_pretrain_trace(const std::vector<PretrainTraceRow>& trace, const std::string& path);

// Fine-tuning data access, bound by the caller to its corpus and caches.
// GC accessors return nullptr for an absent segment.
struct FinetuneData {
    std::vector<std::string> train_queries;
    std::vector<std::string> dev_queries;
    std::function<const Query&(const std::string&)> query;
    std::function<const std::vector<int>&(const std::string&)> query_tokens;
    std::function<const nn::Mat*(const std::string&)> query_gc;
    std::function<const std::vector<int>&(const std::string&)> poi_tokens;
    std::function<const nn::Mat*(const std::string&)> poi_gc;
};

struct FinetuneConfig {
    Head head = Head::BI;
    int epochs = 2;
    int accum = 8;               // queries per optimizer step
    int max_candidates = 10;     // per-step slate cap: gold + shared-name twins + random fill
    double temperature = 0.05;   // divides bi cosine scores before the softmax
    int dev_eval_cap = 150;      // dev queries used for checkpoint selection
    nn::AdamWConfig opt;
};

struct FinetuneResult {
    std::vector<std::pair<int, double>> loss_trace;  // (step, mean listwise loss)
    std::vector<double> dev_recall1_per_epoch;
    int best_epoch = -1;
    double best_dev_recall1 = 0.0;
};

// Listwise softmax cross-entropy over each query's candidate slate with the
// gold as target; gradient accumulation across `accum` queries per step; the
// best-dev-Recall@1 epoch's weights are left in the model.
FinetuneResult finetune(InteractionModel& model, const FinetuneData& data,
                        const FinetuneConfig& fc, uint64_t seed);

}  // namespace mgeo::mm
