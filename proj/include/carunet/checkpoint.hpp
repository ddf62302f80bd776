#pragma once

#include <filesystem>

#include "carunet/car_unet.hpp"

namespace carunet {
inline namespace CARUNET_PRECISION_NS {

// Checkpoint layout: a plain-text header
//
//   CARUNET-CHECKPOINT 1
//   model.<key>=<value>            (architecture, one line per field)
//   tensors=<count>
//   tensor <name> <d0>x<d1>... <byte offset> <byte length> <crc32 hex>
//   ...
//   end
//
// followed by the tensors as little-endian IEEE-754 float32, in manifest
// order, offsets relative to the first byte after "end\n".

void save_weights(const CarUnet& net, const std::filesystem::path& path);

/// Rebuilds the architecture recorded in the file and loads its tensors.
/// Throws a data error (naming every offending tensor) on a truncated file,
/// checksum failure or manifest that does not fit the architecture; nothing
/// is returned in that case.
CarUnet load_weights(const std::filesystem::path& path);

/// Loads into an existing network whose architecture must match exactly;
/// a mismatch is a shape error listing each differing tensor.
void load_weights_into(CarUnet& net, const std::filesystem::path& path);

/// Architecture recorded in a checkpoint header.
CarUnetConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace CARUNET_PRECISION_NS
}  // namespace carunet
