#pragma once

#include <chrono>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace treplina {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ValueError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct InsufficientTokensError : Error {
  using Error::Error;
};
struct DegenerateInputError : Error {
  using Error::Error;
};
struct UsageError : Error {
  using Error::Error;
};

inline std::vector<std::string> split_whitespace(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!cur.empty()) {
        out.push_back(std::move(cur));
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\n\r\f\v");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\n\r\f\v");
  return s.substr(b, e - b + 1);
}

/// Decodes UTF-8 into code points; malformed bytes become U+FFFD.
inline std::vector<uint32_t> utf8_codepoints(const std::string& s) {
  std::vector<uint32_t> out;
  size_t i = 0;
  const size_t n = s.size();
  while (i < n) {
    uint8_t b0 = static_cast<uint8_t>(s[i]);
    uint32_t cp = 0xFFFD;
    size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 >> 5) == 0x6 && i + 1 < n) {
      uint8_t b1 = static_cast<uint8_t>(s[i + 1]);
      if ((b1 >> 6) == 0x2) {
        cp = ((b0 & 0x1Fu) << 6) | (b1 & 0x3Fu);
        len = 2;
      }
    } else if ((b0 >> 4) == 0xE && i + 2 < n) {
      uint8_t b1 = static_cast<uint8_t>(s[i + 1]);
      uint8_t b2 = static_cast<uint8_t>(s[i + 2]);
      if ((b1 >> 6) == 0x2 && (b2 >> 6) == 0x2) {
        cp = ((b0 & 0x0Fu) << 12) | ((b1 & 0x3Fu) << 6) | (b2 & 0x3Fu);
        len = 3;
      }
    } else if ((b0 >> 3) == 0x1E && i + 3 < n) {
      uint8_t b1 = static_cast<uint8_t>(s[i + 1]);
      uint8_t b2 = static_cast<uint8_t>(s[i + 2]);
      uint8_t b3 = static_cast<uint8_t>(s[i + 3]);
      if ((b1 >> 6) == 0x2 && (b2 >> 6) == 0x2 && (b3 >> 6) == 0x2) {
        cp = ((b0 & 0x07u) << 18) | ((b1 & 0x3Fu) << 12) | ((b2 & 0x3Fu) << 6) | (b3 & 0x3Fu);
        len = 4;
      }
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

/// Wall-clock timestamp, e.g. "2025-02-14T09:31:07.123Z".
inline std::string iso_timestamp() {
  using namespace std::chrono;
  auto now = system_clock::now();
  auto ms = duration_cast<milliseconds>(now.time_since_epoch()) % 1000;
  std::time_t t = system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm);
  std::ostringstream os;
  os << buf << '.';
  os.fill('0');
  os.width(3);
  os << ms.count() << 'Z';
  return os.str();
}

}  // namespace treplina
