#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "psst/tensor.hpp"

namespace psst::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Flat binary checkpoint: magic "PSSTCKPT", format-version u32, then one
// record per tensor (name-length u32, UTF-8 name, rank u32, dims u32 x rank,
// data little-endian f64 x count). Record names and order are fixed by the
// agents module.
inline constexpr char kCheckpointMagic[] = "PSSTCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& file,
                     const std::vector<NamedTensor>& tensors);

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& file);

}  // namespace psst::ad
