#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stgat/tensor.hpp"

namespace stgat::ad {

// Checkpoint manifest: ordered list of (name, tensor) with shapes and
// row-major values, plus a small string metadata map (ablation tag, seed).
// JSON with shortest-round-trip doubles, so a save/load/save cycle is
// byte-identical.
struct CheckpointEntry {
  std::string name;
  Tensor tensor;
  bool learnable = true;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace stgat::ad
