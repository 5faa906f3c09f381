#pragma once

#include <cstdint>
#include <string>

namespace dhm {

// FIPS 180-4 SHA-256; used for the artifact manifest.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_file(const std::string& path);

}  // namespace dhm
