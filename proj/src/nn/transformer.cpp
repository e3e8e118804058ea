#include "mgeo/nn/transformer.hpp"

#include <cmath>

namespace mgeo::nn {

void TransformerConfig::validate() const {
    if (layers < 0) throw NnError("transformer: layers must be non-negative");
    if (hidden <= 0 || heads <= 0 || ffn_mult <= 0 || max_seq <= 0)
        throw NnError("transformer: dimensions must be positive");
    if (hidden % heads != 0) throw NnError("transformer: hidden must be divisible by heads");
}

namespace {
std::string layer_prefix(const std::string& prefix, int layer) {
    return prefix + ".l" + std::to_string(layer) + ".";
}
}  // namespace

void add_transformer_params(ParameterStore& ps, const std::string& prefix,
                            const TransformerConfig& cfg) {
    cfg.validate();
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = layer_prefix(prefix, l);
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
            ps.add(p + w, {cfg.hidden, cfg.hidden});
        for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
            ps.add(p + b, {1, cfg.hidden}, Init::ZEROS);
        ps.add(p + "ln1.gamma", {1, cfg.hidden}, Init::ONES);
        ps.add(p + "ln1.beta", {1, cfg.hidden}, Init::ZEROS);
        ps.add(p + "ffn.w1", {cfg.hidden, cfg.ffn_dim()});
        ps.add(p + "ffn.b1", {1, cfg.ffn_dim()}, Init::ZEROS);
        ps.add(p + "ffn.w2", {cfg.ffn_dim(), cfg.hidden});
        ps.add(p + "ffn.b2", {1, cfg.hidden}, Init::ZEROS);
        ps.add(p + "ln2.gamma", {1, cfg.hidden}, Init::ONES);
        ps.add(p + "ln2.beta", {1, cfg.hidden}, Init::ZEROS);
    }
}

int transformer_encode(Tape& tape, ParameterStore& ps, const std::string& prefix,
                       const TransformerConfig& cfg, int input,
                       const std::vector<unsigned char>& key_mask) {
    cfg.validate();
    if (tape.val(input).cols() != cfg.hidden)
        throw NnError("transformer: input width must equal hidden size");
    if (!key_mask.empty() &&
        static_cast<Eigen::Index>(key_mask.size()) != tape.val(input).rows())
        throw NnError("transformer: key mask length must equal sequence length");

    const Real inv_sqrt_d = 1.0 / std::sqrt(static_cast<Real>(cfg.head_dim()));
    int x = input;
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = layer_prefix(prefix, l);
        int q = tape.add_rowvec(tape.matmul(x, tape.param(ps, p + "attn.wq")),
                                tape.param(ps, p + "attn.bq"));
        int k = tape.add_rowvec(tape.matmul(x, tape.param(ps, p + "attn.wk")),
                                tape.param(ps, p + "attn.bk"));
        int v = tape.add_rowvec(tape.matmul(x, tape.param(ps, p + "attn.wv")),
                                tape.param(ps, p + "attn.bv"));
        std::vector<int> heads;
        heads.reserve(static_cast<size_t>(cfg.heads));
        for (int h = 0; h < cfg.heads; ++h) {
            int qh = tape.slice_cols(q, h * cfg.head_dim(), cfg.head_dim());
            int kh = tape.slice_cols(k, h * cfg.head_dim(), cfg.head_dim());
            int vh = tape.slice_cols(v, h * cfg.head_dim(), cfg.head_dim());
            int scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_d);
            int probs = tape.softmax_rows(scores, key_mask);
            heads.push_back(tape.matmul(probs, vh));
        }
        int ctx = cfg.heads == 1 ? heads[0] : tape.concat_cols(heads);
        int attn = tape.add_rowvec(tape.matmul(ctx, tape.param(ps, p + "attn.wo")),
                                   tape.param(ps, p + "attn.bo"));
        x = tape.layer_norm(tape.add(x, attn), tape.param(ps, p + "ln1.gamma"),
                            tape.param(ps, p + "ln1.beta"));
        int h1 = tape.gelu(tape.add_rowvec(tape.matmul(x, tape.param(ps, p + "ffn.w1")),
                                           tape.param(ps, p + "ffn.b1")));
        int f = tape.add_rowvec(tape.matmul(h1, tape.param(ps, p + "ffn.w2")),
                                tape.param(ps, p + "ffn.b2"));
        x = tape.layer_norm(tape.add(x, f), tape.param(ps, p + "ln2.gamma"),
                            tape.param(ps, p + "ln2.beta"));
    }
    return x;
}

}  // namespace mgeo::nn
