#pragma once

#include <photonbench/detection.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>

namespace photonbench::tag_io {

// PBTG binary layout, little-endian:
//   "PBTG" | version u16 | channel u16 | count u64 | count x u64 timestamps (ps)
inline constexpr char kMagic[4] = {'P', 'B', 'T', 'G'};
inline constexpr std::uint16_t kVersion = 1;

void write_binary(std::ostream &out, const detection::TagStream &stream);
/// Duration is not stored; it is set to the last timestamp (0 for empty streams).
detection::TagStream read_binary(std::istream &in);

/// CSV with header "channel,timestamp_ps", one row per tag.
void write_csv(std::ostream &out, const detection::TagStream &stream);
detection::TagStream read_csv(std::istream &in);

std::string to_binary_string(const detection::TagStream &stream);
detection::TagStream from_binary_string(const std::string &bytes);

/// Dispatches on extension: ".csv" is CSV, everything else PBTG.
void save(const std::filesystem::path &path, const detection::TagStream &stream);
detection::TagStream load(const std::filesystem::path &path);

} // namespace photonbench::tag_io
