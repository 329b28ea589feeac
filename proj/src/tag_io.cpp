#include <photonbench/tag_io.hpp>

#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace photonbench::tag_io {

namespace {

template <typename T> void put_le(std::ostream &out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T> T get_le(std::istream &in, const char *what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char *>(bytes.data()), bytes.size()))
    throw ValidationError(std::string("truncated PBTG file while reading ") + what, what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

detection::TagStream finish(detection::TagStream stream) {
  stream.duration = stream.timestamps.empty() ? 0 : stream.timestamps.back();
  detection::validate(stream);
  return stream;
}

} // namespace

void write_binary(std::ostream &out, const detection::TagStream &stream) {
  detection::validate(stream);
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint16_t>(out, kVersion);
  put_le<std::uint16_t>(out, stream.channel);
  put_le<std::uint64_t>(out, stream.timestamps.size());
  for (Picoseconds t : stream.timestamps)
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(t));
}

detection::TagStream read_binary(std::istream &in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw ValidationError("not a PBTG tag file (bad magic)", "magic");
  const auto version = get_le<std::uint16_t>(in, "version");
  if (version != kVersion)
    throw ValidationError("unsupported PBTG version " + std::to_string(version), "version");
  detection::TagStream stream;
  stream.channel = get_le<std::uint16_t>(in, "channel");
  const auto count = get_le<std::uint64_t>(in, "count");
  stream.timestamps.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 26)));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto t = get_le<std::uint64_t>(in, "timestamps");
    if (t > static_cast<std::uint64_t>(std::numeric_limits<Picoseconds>::max()))
      throw ValidationError("timestamp exceeds the signed 64-bit picosecond range", "timestamps");
    stream.timestamps.push_back(static_cast<Picoseconds>(t));
  }
  return finish(std::move(stream));
}

void write_csv(std::ostream &out, const detection::TagStream &stream) {
  detection::validate(stream);
  out << "channel,timestamp_ps\n";
  for (Picoseconds t : stream.timestamps)
    out << stream.channel << ',' << t << '\n';
}

detection::TagStream read_csv(std::istream &in) {
  std::string line;
  if (!std::getline(in, line) || line != "channel,timestamp_ps")
    throw ValidationError("tag CSV must start with header 'channel,timestamp_ps'", "header");
  detection::TagStream stream;
  bool have_channel = false;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty())
      continue;
    const auto comma = line.find(',');
    unsigned channel = 0;
    Picoseconds t = 0;
    const char *begin = line.data();
    const char *end = begin + line.size();
    if (comma == std::string::npos ||
        std::from_chars(begin, begin + comma, channel).ec != std::errc{} ||
        std::from_chars(begin + comma + 1, end, t).ec != std::errc{} || channel > 0xFFFF)
      throw ValidationError("malformed tag CSV row " + std::to_string(row), "row");
    if (have_channel && channel != stream.channel)
      throw ValidationError("tag CSV mixes channels; split it per channel", "channel");
    stream.channel = static_cast<std::uint16_t>(channel);
    have_channel = true;
    stream.timestamps.push_back(t);
  }
  return finish(std::move(stream));
}

std::string to_binary_string(const detection::TagStream &stream) {
  std::ostringstream out(std::ios::binary);
  write_binary(out, stream);
  return out.str();
}

detection::TagStream from_binary_string(const std::string &bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_binary(in);
}

void save(const std::filesystem::path &path, const detection::TagStream &stream) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  if (path.extension() == ".csv")
    write_csv(out, stream);
  else
    write_binary(out, stream);
}

detection::TagStream load(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  return path.extension() == ".csv" ? read_csv(in) : read_binary(in);
}

} // namespace photonbench::tag_io
