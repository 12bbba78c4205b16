#pragma once

// "STRC" checkpoint, little-endian:
//
//   char[4]  "STRC"
//   u8       version (1)
//   u32      config text length, then the serialized RunConfig
//   u32      parameter count P
//   P times:
//     u32 name length, name bytes
//     u32 rank, u32[rank] extents
//     f32[product(extents)] values

#include <iosfwd>
#include <string>

#include "strnet/config.hpp"
#include "strnet/model.hpp"

namespace strnet {

struct Checkpoint {
  RunConfig config;
  ModelParams<float> params;
};

void write_checkpoint(std::ostream& out, const RunConfig& cfg, ModelParams<float>& params);
void save_checkpoint(const std::string& path, const RunConfig& cfg, ModelParams<float>& params);

/// Rebuilds the parameter set from the embedded config and fills it by name.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::string& path);

/// Copies parameters into a model built from `cfg`. Throws when the name or
/// shape sets differ (checkpoint/config mismatch).
ModelParams<float> params_for_config(const Checkpoint& ckpt, const RunConfig& cfg);

}  // namespace strnet
