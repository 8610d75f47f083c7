#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace tci {

/// 128-bit BLAKE2b digest; identifies array configurations and tag files.
using Digest = std::array<std::uint8_t, 16>;

Digest digest_of(std::string_view bytes);
std::string to_hex(const Digest& d);
/// Parses 32 hex characters; returns false on malformed input.
bool from_hex(std::string_view hex, Digest& out);
bool is_zero(const Digest& d);

}  // namespace tci
