#include "spikeformer/config.hpp"

#include <charconv>
#include <cstdio>

#include "spikeformer/error.hpp"

namespace spikeformer {

namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const ConfigLine& line, const char* what) {
  throw ConfigError("config line " + std::to_string(line.line_no) + ": '" +
                    line.text + "': expected " + what + " for '" + line.key +
                    "'");
}

}  // namespace

std::vector<ConfigLine> parse_key_values(std::string_view text) {
  std::vector<ConfigLine> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    std::string_view body = raw;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) {
      body = body.substr(0, hash);
    }
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    ConfigLine line{line_no, {}, {}, std::string(trim(raw))};
    if (eq == std::string_view::npos || trim(body.substr(0, eq)).empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": '" +
                        line.text + "': expected key=value");
    }
    line.key = std::string(trim(body.substr(0, eq)));
    line.value = std::string(trim(body.substr(eq + 1)));
    out.push_back(std::move(line));
  }
  return out;
}

std::uint64_t config_u64(const ConfigLine& line) {
  std::uint64_t v = 0;
  const char* b = line.value.data();
  const char* e = b + line.value.size();
  const auto r = std::from_chars(b, e, v);
  if (line.value.empty() || r.ec != std::errc() || r.ptr != e) {
    bad_value(line, "a non-negative integer");
  }
  return v;
}

std::size_t config_size(const ConfigLine& line) {
  return static_cast<std::size_t>(config_u64(line));
}

double config_double(const ConfigLine& line) {
  double v = 0;
  const char* b = line.value.data();
  const char* e = b + line.value.size();
  const auto r = std::from_chars(b, e, v);
  if (line.value.empty() || r.ec != std::errc() || r.ptr != e) {
    bad_value(line, "a number");
  }
  return v;
}

bool config_bool(const ConfigLine& line) {
  const auto& v = line.value;
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(line, "a boolean");
}

void throw_unknown_key(const ConfigLine& line) {
  throw ConfigError("config line " + std::to_string(line.line_no) + ": '" +
                    line.text + "': unknown key '" + line.key + "'");
}

std::string format_double(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spikeformer
