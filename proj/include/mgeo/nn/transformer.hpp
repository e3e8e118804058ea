#pragma once

#include <string>
#include <vector>

#include "mgeo/nn/tape.hpp"

namespace mgeo::nn {

struct TransformerConfig {
    int layers = 2;
    int hidden = 64;
    int heads = 4;
    int ffn_mult = 2;
    int max_seq = 128;

    int head_dim() const { return hidden / heads; }
    int ffn_dim() const { return hidden * ffn_mult; }
    void validate() const;
};

// Registers all weights of a post-layer-norm encoder stack under
// `prefix.l<i>.*`. Call once per store; encode() then references them by name.
void add_transformer_params(ParameterStore& ps, const std::string& prefix,
                            const TransformerConfig& cfg);

// Runs the encoder stack over `input` (seq x hidden). Positions whose
// key_mask entry is 0 are excluded as attention keys in every layer, so the
// outputs at unmasked positions match those of a physically shortened
// sequence. With zero layers the input node is returned unchanged.
int transformer_encode(Tape& tape, ParameterStore& ps, const std::string& prefix,
                       const TransformerConfig& cfg, int input,
                       const std::vector<unsigned char>& key_mask = {});

}  // namespace mgeo::nn
