#pragma once

// Framed binary checkpoint container: magic "GTWF", u32 version, then
// length-prefixed named records (config text, iteration, one record per
// parameter holding dtype tag + shape + raw little-endian values). Raw bits
// are preserved, so a load reproduces forward outputs exactly.

#include <string>

#include "gtf/model.hpp"

namespace gtf {

void save_model(const std::string& path, const GasTwinFormer& model, i64 iteration);

// Reads just the embedded config.
ModelConfig checkpoint_config(const std::string& path);

// Rebuilds the model from the embedded config and restores every parameter.
GasTwinFormer load_model(const std::string& path, i64* iteration = nullptr);

} // namespace gtf
