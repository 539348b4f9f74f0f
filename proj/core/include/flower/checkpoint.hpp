#pragma once

#include <string>

#include "flower/model.hpp"

namespace flower::nn {

// Versioned JSON checkpoint: config, vocabulary, every named parameter
// tensor with its shape, and batch-norm running statistics. Doubles are
// serialized with exact round-trip precision, so save/load is lossless.
void save_checkpoint(const std::string& path, ModelParameters& params);
ModelParameters load_checkpoint(const std::string& path);

}  // namespace flower::nn
