#pragma once

// Versioned binary container shared by checkpoints and prompt pools:
//
//   magic[8] | u32 version | u64 header_bytes | header (JSON, UTF-8) | tensors
//
// The header lists every tensor as {"rows", "cols"} under "tensors"; tensor
// payloads follow in that order as row-major little-endian IEEE-754 float64.

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "settp/matrix.hpp"

namespace settp {

struct Container {
  std::uint32_t version = 0;
  nlohmann::json header;
  std::vector<Matrix> tensors;
};

void write_container(const std::filesystem::path& path, std::string_view magic,
                     std::uint32_t version, nlohmann::json header,
                     const std::vector<const Matrix*>& tensors);

/// Throws format errors on bad magic, version mismatch, or truncation.
Container read_container(const std::filesystem::path& path, std::string_view magic,
                         std::uint32_t expected_version, bool header_only = false);

}  // namespace settp
