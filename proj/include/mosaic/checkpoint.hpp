// Versioned binary weight container.
//
// Layout, all integers and floats little-endian:
//   bytes 0..3   magic "MSCK"
//   u32          version (1)
//   u32          tensor count
//   per tensor:
//     u32        name length in bytes, then the UTF-8 name
//     u32        rank, then rank x u64 dimensions
//     f64 x prod(dims)   row-major data

#pragma once

#include "mosaic/model.hpp"
#include "mosaic/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mosaic {

inline constexpr char kCheckpointMagic[4] = {'M', 'S', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Matrix value;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies tensors into the model by name. Every model parameter must be
/// present with a matching shape.
void restore(Model& model, const std::vector<NamedTensor>& tensors);

}  // namespace mosaic
