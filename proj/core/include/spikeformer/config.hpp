#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// key=value text dialect shared by config files and the checkpoint config
// blob. One entry per line, '#' starts a comment, blank lines are ignored.
namespace spikeformer {

struct ConfigLine {
  std::size_t line_no = 0;
  std::string key;
  std::string value;
  std::string text;  // the raw line, for diagnostics
};

std::vector<ConfigLine> parse_key_values(std::string_view text);

// Value converters; each throws ConfigError quoting the line on failure.
std::size_t config_size(const ConfigLine& line);
std::uint64_t config_u64(const ConfigLine& line);
double config_double(const ConfigLine& line);
bool config_bool(const ConfigLine& line);

[[noreturn]] void throw_unknown_key(const ConfigLine& line);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(std::string_view text);

}  // namespace spikeformer
