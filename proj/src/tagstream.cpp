#include "tci/tagstream.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>

#include "tci/errors.hpp"
#include "tci/io.hpp"

namespace tci {

namespace {

constexpr char kMagic[4] = {'T', 'C', 'I', '1'};
constexpr std::string_view kCsvHeader = "channel,t_ps";

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xFF));
    u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(const char* p) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = sizeof(T); i-- > 0;) u = static_cast<U>((u << 8) | static_cast<std::uint8_t>(p[i]));
  return static_cast<T>(u);
}

void check_order(const std::array<Picoseconds, kChannelCount>& last, const std::array<bool, kChannelCount>& seen,
                 int channel, Picoseconds t, std::size_t record) {
  if (t < 0)
    throw OrderError(fmt::format("negative timestamp {} on channel {} at record {}", t, channel, record));
  if (seen[channel] && t < last[channel])
    throw OrderError(fmt::format("channel {} goes backwards at record {} ({} < {})", channel, record, t,
                                 last[channel]));
}

TagStream read_binary(const std::string& data) {
  if (data.size() < kTagHeaderBytes)
    throw FormatError(fmt::format("truncated header: {} of {} bytes", data.size(), kTagHeaderBytes));
  if (std::memcmp(data.data(), kMagic, 4) != 0) throw FormatError("bad magic (expected TCI1)");
  const auto version = get_le<std::uint16_t>(data.data() + 4);
  if (version != kTagFormatVersion)
    throw FormatError(fmt::format("unsupported TCI1 version {} (supported: {})", version, kTagFormatVersion));

  TagStream stream;
  std::memcpy(stream.header().array_digest.data(), data.data() + 8, 16);
  const auto count = get_le<std::uint64_t>(data.data() + 24);
  const std::size_t body = data.size() - kTagHeaderBytes;
  const std::size_t complete = body / kTagRecordBytes;
  if (complete < count) {
    const std::size_t offset = kTagHeaderBytes + complete * kTagRecordBytes;
    throw FormatError(fmt::format("truncated record at byte offset {} (header declares {} records, file holds {})",
                                  offset, count, complete));
  }
  if (body != count * kTagRecordBytes)
    throw FormatError(fmt::format("{} trailing bytes after {} records",
                                  body - count * kTagRecordBytes, count));

  std::array<Picoseconds, kChannelCount> last{};
  std::array<bool, kChannelCount> seen{};
  const char* p = data.data() + kTagHeaderBytes;
  for (std::uint64_t r = 0; r < count; ++r, p += kTagRecordBytes) {
    const auto channel = static_cast<std::uint8_t>(p[0]);
    if (channel >= kChannelCount)
      throw FormatError(fmt::format("channel {} out of range at byte offset {}", channel,
                                    kTagHeaderBytes + r * kTagRecordBytes));
    const auto t = get_le<std::int64_t>(p + 1);
    check_order(last, seen, channel, t, r);
    last[channel] = t;
    seen[channel] = true;
    stream.mutable_channel(channel).push_back(t);
  }
  return stream;
}

TagStream read_csv(std::istream& in) {
  TagStream stream;
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCsvHeader) throw FormatError("CSV tag file must start with 'channel,t_ps'");
  std::array<Picoseconds, kChannelCount> last{};
  std::array<bool, kChannelCount> seen{};
  std::size_t record = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    int channel = -1;
    Picoseconds t = 0;
    bool ok = comma != std::string::npos;
    if (ok) {
      auto r1 = std::from_chars(line.data(), line.data() + comma, channel);
      auto r2 = std::from_chars(line.data() + comma + 1, line.data() + line.size(), t);
      ok = r1.ec == std::errc{} && r1.ptr == line.data() + comma && r2.ec == std::errc{} &&
           r2.ptr == line.data() + line.size();
    }
    if (!ok) throw FormatError(fmt::format("malformed CSV tag at line {}: '{}'", line_no, line));
    if (channel < 0 || channel >= kChannelCount)
      throw FormatError(fmt::format("channel {} out of range at line {}", channel, line_no));
    check_order(last, seen, channel, t, record);
    last[channel] = t;
    seen[channel] = true;
    stream.mutable_channel(channel).push_back(t);
    ++record;
  }
  return stream;
}

}  // namespace

std::size_t TagStream::size() const {
  std::size_t n = 0;
  for (const auto& c : channels_) n += c.size();
  return n;
}

std::vector<TimeTag> TagStream::merged() const {
  std::vector<TimeTag> out;
  out.reserve(size());
  std::array<std::size_t, kChannelCount> cursor{};
  while (true) {
    int best = -1;
    for (int c = 0; c < kChannelCount; ++c) {
      if (cursor[c] >= channels_[c].size()) continue;
      if (best < 0 || channels_[c][cursor[c]] < channels_[best][cursor[best]]) best = c;
    }
    if (best < 0) break;
    out.push_back({static_cast<std::uint8_t>(best), channels_[best][cursor[best]++]});
  }
  return out;
}

void TagStream::validate() const {
  for (int c = 0; c < kChannelCount; ++c) {
    const auto& ch = channels_[c];
    for (std::size_t i = 0; i < ch.size(); ++i) {
      if (ch[i] < 0) throw OrderError(fmt::format("negative timestamp on channel {} at index {}", c, i));
      if (i > 0 && ch[i] < ch[i - 1])
        throw OrderError(fmt::format("channel {} goes backwards at index {}", c, i));
    }
  }
}

std::size_t write_tags(const TagStream& stream, std::ostream& sink) {
  stream.validate();
  const auto tags = stream.merged();
  std::string buf;
  buf.reserve(kTagHeaderBytes + tags.size() * kTagRecordBytes);
  buf.append(kMagic, 4);
  put_le<std::uint16_t>(buf, stream.header().version);
  put_le<std::uint16_t>(buf, 0);
  buf.append(reinterpret_cast<const char*>(stream.header().array_digest.data()), 16);
  put_le<std::uint64_t>(buf, tags.size());
  for (const auto& tag : tags) {
    buf.push_back(static_cast<char>(tag.channel));
    put_le<std::int64_t>(buf, tag.t);
  }
  sink.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!sink) throw IoError("tag sink write failed");
  return buf.size();
}

void write_tags_file(const TagStream& stream, const std::filesystem::path& path) {
  write_file_atomic(path, [&](std::ostream& out) { write_tags(stream, out); });
}

void write_tags_csv(const TagStream& stream, std::ostream& sink) {
  stream.validate();
  sink << kCsvHeader << '\n';
  for (const auto& tag : stream.merged()) sink << static_cast<int>(tag.channel) << ',' << tag.t << '\n';
  if (!sink) throw IoError("tag sink write failed");
}

TagStream read_tags(std::istream& source) {
  std::string head(4, '\0');
  source.read(head.data(), 4);
  head.resize(static_cast<std::size_t>(source.gcount()));
  if (source.bad()) throw IoError("tag source read failed");
  if (head.size() == 4 && std::memcmp(head.data(), kMagic, 4) == 0) {
    std::string data = head;
    data.append(std::istreambuf_iterator<char>(source), std::istreambuf_iterator<char>());
    if (source.bad()) throw IoError("tag source read failed");
    return read_binary(data);
  }
  if (head.size() == 4 && head == kCsvHeader.substr(0, 4)) {
    std::string rest(std::istreambuf_iterator<char>(source), {});
    std::istringstream in(head + rest);
    return read_csv(in);
  }
  throw FormatError("bad magic (expected TCI1 or 'channel,t_ps' CSV header)");
}

TagStream read_tags_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open tag file '{}'", path.string()));
  return read_tags(in);
}

}  // namespace tci
