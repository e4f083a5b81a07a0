#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icil/optim.hpp"

namespace icil::num {

// Binary tensor container, little-endian throughout:
//   magic (4 bytes) | version u32 | entry count u32
//   per entry: name length u32 | UTF-8 name | dtype tag u32 (0 = f32)
//              rank u32 | dims u32[rank] | raw data
// Checkpoints use magic "RSSM"; demo sets reuse the same header discipline
// with their own magic. Values are stored as f32; all in-memory compute stays
// f64.

constexpr uint32_t kContainerVersion = 1;

struct ContainerEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void write_container(const std::string& path, const char magic[4],
                     const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> read_container(const std::string& path,
                                           const char magic[4]);

// Parameter checkpoints (values only; optimizer state is not persisted).
void save_checkpoint(const std::string& path, const ParamStore& params);
// Loads into an empty or matching store; creates entries as needed.
void load_checkpoint(const std::string& path, ParamStore& params);

}  // namespace icil::num
