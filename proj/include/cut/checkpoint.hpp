#pragma once

// Versioned binary container: a JSON header (metadata plus a tensor table)
// followed by little-endian float32 payload and an FNV-1a checksum.
//
//   "CUTCKPT\0" | u32 version | u64 header bytes | header JSON
//   | u64 payload bytes | payload | u64 checksum(payload)

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cut/tensor.hpp"

namespace cut::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

class Checkpoint {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add(const std::string& name, const Tensor<float>& t);
  bool has(const std::string& name) const;
  /// Throws InvalidCheckpoint when absent.
  const Tensor<float>& get(const std::string& name) const;
  /// Copies a stored tensor into `dst`; throws InvalidCheckpoint when the
  /// shape differs.
  void restore(const std::string& name, Tensor<float>& dst) const;
  const std::vector<std::pair<std::string, Tensor<float>>>& tensors() const { return tensors_; }

  /// Writes atomically (temporary file + rename).
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, Tensor<float>>> tensors_;
};

}  // namespace cut::ckpt
