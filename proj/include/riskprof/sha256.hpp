#pragma once
// Minimal SHA-256 for content-addressed artifacts and stage caching.

#include <cstdint>
#include <string>

namespace riskprof {

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& text);
std::string sha256_file_hex(const std::string& path);  // throws when unreadable

/// First 8 bytes of sha256(root ":" stream) as a little-endian seed.
std::uint64_t derive_seed(std::uint64_t root, const std::string& stream);

}  // namespace riskprof
