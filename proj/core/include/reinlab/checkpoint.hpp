#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "reinlab/parameters.hpp"

REINLAB_NAMESPACE_BEGIN

struct CheckpointTensor {
  std::string name;
  Component component = Component::backbone;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

// Named-tensor container. Binary layout, all integers little-endian:
//
//   magic "REINLAB1" | version u32 | tensor_count u32 |
//   per tensor: name_len u16 | name bytes | component u8 | ndim u8 |
//               dims u32 x ndim | f32 data
//
// Model configuration and training metadata travel in a JSON sidecar
// ("<file>.json") so the binary layout stays fixed.
class Checkpoint {
 public:
  static constexpr std::string_view kMagic = "REINLAB1";
  static constexpr std::uint32_t kVersion = 1;

  std::vector<CheckpointTensor> tensors;
  nlohmann::json metadata;

  std::string serialize() const;
  // Throws ParseError naming `source` and the byte offset of the problem.
  static Checkpoint parse(std::string_view bytes, const std::string& source = "<memory>");

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  const CheckpointTensor* find(std::string_view name) const;
  Checkpoint filter(Component component) const;
  std::size_t scalar_count() const;
};

REINLAB_NAMESPACE_END
