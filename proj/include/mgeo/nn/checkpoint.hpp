#pragma once

#include <map>
#include <string>

#include "mgeo/nn/tensor.hpp"

namespace mgeo::nn {

// Binary container for a ParameterStore: magic + version header, a string
// metadata block (stage tag, config hash, ...), then every tensor with its
// name and shape, in store order.
void save_checkpoint(const ParameterStore& ps, const std::string& path,
                     const std::map<std::string, std::string>& metadata);

// Loads values into an already-built store. The file must contain exactly the
// parameters the store declares, with identical shapes; anything else is a
// CorpusError-style hard failure. Returns the metadata block.
std::map<std::string, std::string> load_checkpoint(ParameterStore& ps, const std::string& path);

// Reads just the metadata block.
std::map<std::string, std::string> read_checkpoint_meta(const std::string& path);

}  // namespace mgeo::nn
