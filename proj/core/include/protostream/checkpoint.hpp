#pragma once

#include <cstdint>
#include <string>

#include "protostream/optim.hpp"
#include "protostream/params.hpp"
#include "protostream/version.hpp"

namespace protostream {

// Flat named-tensor container with a versioned header. Values are stored as
// 64-bit little-endian floats regardless of the build's Real type.
struct CheckpointHeader {
  uint32_t schema_version = kSchemaVersion;
  std::string learner;
  uint64_t config_hash = 0;
  int64_t train_step = 0;
  double best_val_ap = 0.0;
};

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParameterStore& params,
                     const Adam* optimizer = nullptr);

// Loads values into an already-constructed store: names and shapes must
// match the store exactly, otherwise the checkpoint belongs to a different
// learner/config and a ConfigError is raised.
CheckpointHeader load_checkpoint(const std::string& path,
                                 ParameterStore& params,
                                 Adam* optimizer = nullptr);

// Header-only read (for inspection and compatibility checks).
CheckpointHeader peek_checkpoint(const std::string& path);

}  // namespace protostream
