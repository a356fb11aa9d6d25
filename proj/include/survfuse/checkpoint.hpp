#ifndef SURVFUSE_CHECKPOINT_HPP
#define SURVFUSE_CHECKPOINT_HPP

#include <cstdint>
#include <string>

#include "survfuse/fusionnet.hpp"
#include "survfuse/harness.hpp"

namespace survfuse {

/// Trained weights plus everything needed to score new patients with them.
struct Checkpoint {
  ModelParams params;
  Standardization stats;
  std::uint64_t seed = 0;
  int fold = 0;
  std::string variant;
  std::size_t best_epoch = 0;
};

// Layout: magic "SFCKPT1\0", header length (u64 LE), JSON header listing each
// tensor's name, shape, byte offset and size, then the FMAT1 blobs back to back.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace survfuse

#endif
