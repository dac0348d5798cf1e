#pragma once

#include <charconv>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>

#include "smsn/errors.hpp"

namespace smsn {

/// Calendar date with day-resolution arithmetic (proleptic Gregorian).
struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  auto operator<=>(const Date&) const = default;

  /// Days since 1970-01-01 (negative before).
  long serial() const {
    long y = year;
    const unsigned m = static_cast<unsigned>(month);
    const unsigned d = static_cast<unsigned>(day);
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
  }

  static Date from_serial(long z) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return Date{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
  }

  Date plus_days(long n) const { return from_serial(serial() + n); }

  long days_until(const Date& other) const { return other.serial() - serial(); }

  std::string iso() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
  }
};

/// Parses "YYYY-MM-DD".
inline Date parse_iso_date(std::string_view s) {
  Date d;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-')
    throw parse_error("bad ISO date: '" + std::string(s) + "'");
  auto num = [&](int lo, int hi) {
    int v = 0;
    auto [p, ec] = std::from_chars(s.data() + lo, s.data() + hi, v);
    if (ec != std::errc() || p != s.data() + hi)
      throw parse_error("bad ISO date: '" + std::string(s) + "'");
    return v;
  };
  d.year = num(0, 4);
  d.month = num(5, 7);
  d.day = num(8, 10);
  return d;
}

/// Parses the "m/d/yy" column headers of the JHU CSSE wide CSV.
inline Date parse_mdy_date(std::string_view s) {
  int parts[3] = {0, 0, 0};
  int idx = 0;
  const char* p = s.data();
  const char* end = s.data() + s.size();
  while (p < end && idx < 3) {
    auto [q, ec] = std::from_chars(p, end, parts[idx]);
    if (ec != std::errc()) throw parse_error("bad m/d/yy date: '" + std::string(s) + "'");
    p = q;
    ++idx;
    if (p < end) {
      if (*p != '/') throw parse_error("bad m/d/yy date: '" + std::string(s) + "'");
      ++p;
    }
  }
  if (idx != 3 || p != end) throw parse_error("bad m/d/yy date: '" + std::string(s) + "'");
  int year = parts[2];
  if (year < 100) year += 2000;
  return Date{year, parts[0], parts[1]};
}

}  // namespace smsn
