#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace msadm {

// Error taxonomy. Everything below BackendError is a data-side failure;
// the CLI maps data errors to exit code 2 and backend errors to 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : Error {
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_number(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_number(0) {}
  std::size_t line_number;
};

struct ValidationError : Error {
  using Error::Error;
};

struct LookupError : Error {
  using Error::Error;
};

struct StructuralError : Error {
  using Error::Error;
};

// Carries the offending raw text so callers can log or persist it.
struct SchemaError : Error {
  SchemaError(const std::string& what, std::string raw_text)
      : Error(what), raw(std::move(raw_text)) {}
  explicit SchemaError(const std::string& what) : Error(what) {}
  std::string raw;
};

struct BackendError : Error {
  using Error::Error;
};

inline uint64_t fnv1a64(const void* data, std::size_t len, uint64_t seed = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t seed = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), seed);
}

inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  uint64_t h = fnv1a64(tag);
  h ^= seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

// Shortest round-trip decimal rendering. Locale-independent by construction.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Fixed-decimal rendering built on integer math so the C locale never leaks in.
inline std::string fmt_fixed(double v, int decimals) {
  bool neg = std::signbit(v) && v != 0.0;
  double scale = 1.0;
  for (int i = 0; i < decimals; ++i) scale *= 10.0;
  long long scaled = std::llround(std::fabs(v) * scale);
  std::string digits = std::to_string(scaled);
  if (decimals == 0) return (neg ? "-" : "") + digits;
  if (digits.size() <= static_cast<std::size_t>(decimals))
    digits.insert(0, static_cast<std::size_t>(decimals) + 1 - digits.size(), '0');
  digits.insert(digits.size() - static_cast<std::size_t>(decimals), ".");
  return (neg ? "-" : "") + digits;
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ParseError("not a number: '" + std::string(s) + "'");
  return v;
}

inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw std::domain_error(std::string(what) + " is not finite");
}

template <typename It>
inline bool all_finite(It first, It last) {
  for (; first != last; ++first)
    if (!std::isfinite(*first)) return false;
  return true;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.emplace_back(text.substr(pos));
      break;
    }
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    pos = nl + 1;
  }
  return lines;
}

}  // namespace msadm
