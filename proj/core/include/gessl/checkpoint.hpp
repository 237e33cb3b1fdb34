#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gessl/models.hpp"

namespace gessl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrorCode { bad_magic, bad_version, truncated, malformed, io };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  CheckpointErrorCode code() const noexcept { return code_; }

 private:
  CheckpointErrorCode code_;
};

/// "GSSL", u32 version, u64 count, then per parameter: u16 name length, name,
/// u8 rank, u64 dims, float64 data. All little-endian.
std::vector<char> encode_checkpoint(const ParameterSet& params);
ParameterSet decode_checkpoint(const std::vector<char>& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace gessl
