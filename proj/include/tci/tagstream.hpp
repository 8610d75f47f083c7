#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "tci/digest.hpp"
#include "tci/units.hpp"

namespace tci {

inline constexpr int kChannelCount = 8;
inline constexpr std::uint16_t kTagFormatVersion = 1;
inline constexpr std::size_t kTagHeaderBytes = 32;
inline constexpr std::size_t kTagRecordBytes = 9;

enum class Polarity : std::uint8_t { Positive, Negative };

/// Channel = 2 * bus + end. End 0 carries the positive pulse, end 1 the negative.
constexpr int channel_of(int bus, int end) { return 2 * bus + end; }
constexpr int bus_of_channel(int channel) { return channel / 2; }
constexpr int end_of_channel(int channel) { return channel % 2; }
constexpr Polarity polarity_of_channel(int channel) {
  return end_of_channel(channel) == 0 ? Polarity::Positive : Polarity::Negative;
}

struct TimeTag {
  std::uint8_t channel = 0;
  Picoseconds t = 0;

  Polarity polarity() const { return polarity_of_channel(channel); }
  bool operator==(const TimeTag&) const = default;
};

struct TagStreamHeader {
  std::uint16_t version = kTagFormatVersion;
  /// Digest of the ArrayModel the tags were produced for; all-zero if unknown (CSV input).
  Digest array_digest{};

  bool operator==(const TagStreamHeader&) const = default;
};

/// Eight per-channel timelines, each sorted ascending.
class TagStream {
 public:
  TagStream() = default;
  explicit TagStream(const Digest& array_digest) { header_.array_digest = array_digest; }

  const TagStreamHeader& header() const { return header_; }
  TagStreamHeader& header() { return header_; }

  std::span<const Picoseconds> channel(int c) const { return channels_.at(static_cast<std::size_t>(c)); }
  std::vector<Picoseconds>& mutable_channel(int c) { return channels_.at(static_cast<std::size_t>(c)); }

  std::size_t size() const;
  bool empty() const { return size() == 0; }

  /// All tags in file order: ascending time, ties by channel.
  std::vector<TimeTag> merged() const;

  /// Throws OrderError naming the first channel and index that goes backwards,
  /// or a negative timestamp.
  void validate() const;

  bool operator==(const TagStream&) const = default;

 private:
  TagStreamHeader header_;
  std::array<std::vector<Picoseconds>, kChannelCount> channels_;
};

/// TCI1 binary encoding, little-endian:
///   0  "TCI1"           4 bytes
///   4  version          u16
///   6  reserved         u16 (zero)
///   8  array digest     16 bytes
///  24  record count     u64
///  32  records          9 bytes each: channel u8, timestamp i64
/// Returns the number of bytes written. Throws IoError.
std::size_t write_tags(const TagStream& stream, std::ostream& sink);
void write_tags_file(const TagStream& stream, const std::filesystem::path& path);

/// CSV alternative: header line "channel,t_ps" then one tag per line.
void write_tags_csv(const TagStream& stream, std::ostream& sink);

/// Accepts TCI1 or CSV, detected from the first bytes.
/// Throws FormatError, OrderError, IoError.
TagStream read_tags(std::istream& source);
TagStream read_tags_file(const std::filesystem::path& path);

}  // namespace tci
