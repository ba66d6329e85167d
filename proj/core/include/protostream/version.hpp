#pragma once

#include <cstdint>

namespace protostream {

// Bumped whenever an on-disk format (config, sequence files, checkpoints,
// record exports) changes incompatibly. Readers refuse mismatched versions.
inline constexpr uint32_t kSchemaVersion = 1;

}  // namespace protostream
