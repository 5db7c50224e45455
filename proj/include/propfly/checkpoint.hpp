#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "propfly/param_store.hpp"

namespace propfly {

// Named-tensor file: "PFLY", u32 version, u32 entry count, then per entry
// u16 name length, name bytes, u8 rank, u32 dims, u8 role, f64 payload.
// All integers and floats are little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ParamStore& store);
ParamStore decode_checkpoint(std::string_view bytes);

// Writes with exclusive create unless `overwrite` is set.
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, bool overwrite = false);
ParamStore load_checkpoint(const std::filesystem::path& path);
// Loads only the entries tagged `role`; a file holding none of them is a
// role mismatch.
ParamStore load_checkpoint(const std::filesystem::path& path, Role role);

ParamStore select_role(const ParamStore& store, Role role);
// Concatenates stores; names must stay unique.
ParamStore merge_stores(const ParamStore& a, const ParamStore& b);

std::string read_file(const std::filesystem::path& path);
// Exclusive create unless `overwrite` is set.
void write_file(const std::filesystem::path& path, std::string_view bytes, bool overwrite);

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

}  // namespace propfly
