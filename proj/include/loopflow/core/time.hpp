#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "loopflow/core/error.hpp"

namespace loopflow {

/// Naive local wall-clock time, second resolution. No timezone or DST logic.
using Timestamp = std::chrono::sys_seconds;
using Date = std::chrono::sys_days;

enum class Weekday { mon = 0, tue, wed, thu, fri, sat, sun };

inline constexpr const char* weekday_name(Weekday d) {
  constexpr const char* names[] = {"Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"};
  return names[static_cast<int>(d)];
}

inline std::optional<Weekday> parse_weekday(std::string_view s) {
  for (int i = 0; i < 7; ++i) {
    if (s == weekday_name(static_cast<Weekday>(i))) return static_cast<Weekday>(i);
  }
  return std::nullopt;
}

inline Weekday weekday_of(Date d) {
  const unsigned iso = std::chrono::weekday{d}.iso_encoding();  // Mon=1..Sun=7
  return static_cast<Weekday>(iso - 1);
}

namespace detail {

inline bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  const char* b = s.data() + pos;
  auto [p, ec] = std::from_chars(b, b + len, out);
  return ec == std::errc{} && p == b + len;
}

inline std::optional<Date> make_date(int y, int m, int d) {
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days{ymd};
}

}  // namespace detail

/// Parses `YYYY-MM-DD`.
inline std::optional<Date> try_parse_date(std::string_view s) {
  int y = 0, m = 0, d = 0;
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!detail::read_int(s, 0, 4, y) || !detail::read_int(s, 5, 2, m) || !detail::read_int(s, 8, 2, d)) {
    return std::nullopt;
  }
  return detail::make_date(y, m, d);
}

inline Date parse_date(std::string_view s) {
  auto d = try_parse_date(s);
  if (!d) throw DataError("invalid date '" + std::string(s) + "', expected YYYY-MM-DD");
  return *d;
}

/// Parses ISO-8601 local time: `YYYY-MM-DDTHH:MM[:SS]` (a space may replace `T`).
inline std::optional<Timestamp> try_parse_timestamp(std::string_view s) {
  if (s.size() != 16 && s.size() != 19) return std::nullopt;
  auto date = try_parse_date(s.substr(0, 10));
  if (!date || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') return std::nullopt;
  int hh = 0, mm = 0, ss = 0;
  if (!detail::read_int(s, 11, 2, hh) || !detail::read_int(s, 14, 2, mm)) return std::nullopt;
  if (s.size() == 19 && (s[16] != ':' || !detail::read_int(s, 17, 2, ss))) return std::nullopt;
  if (hh > 23 || mm > 59 || ss > 59) return std::nullopt;
  return Timestamp{*date} + std::chrono::hours{hh} + std::chrono::minutes{mm} + std::chrono::seconds{ss};
}

inline Timestamp parse_timestamp(std::string_view s) {
  auto t = try_parse_timestamp(s);
  if (!t) throw DataError("invalid timestamp '" + std::string(s) + "'");
  return *t;
}

inline std::string format_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

inline std::string format_timestamp(Timestamp t) {
  const Date d = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::hh_mm_ss hms{t - Timestamp{d}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02d", format_date(d).c_str(), static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()), static_cast<int>(hms.seconds().count()));
  return buf;
}

/// Calendar month key `YYYY-MM`.
inline std::string month_key(Date d) { return format_date(d).substr(0, 7); }

/// Inclusive range of calendar days.
struct DateRange {
  Date first;
  Date last;

  bool contains(Date d) const { return first <= d && d <= last; }
  bool overlaps(const DateRange& o) const { return first <= o.last && o.first <= last; }
};

inline DateRange parse_date_range(std::string_view from, std::string_view to) {
  DateRange r{parse_date(from), parse_date(to)};
  if (r.last < r.first) throw UsageError("date range ends before it starts");
  return r;
}

/// The canonical sampling grid. Time points are `start + i * interval` for
/// `i in [0, size)`; `start` sits on a day boundary so that time-of-day slots
/// line up with daily profiles.
class TimeGrid {
 public:
  TimeGrid() = default;

  TimeGrid(Date first_day, std::int64_t days, std::chrono::minutes interval = std::chrono::minutes{3})
      : start_{first_day}, interval_{interval} {
    check_interval(interval);
    if (days < 0) throw UsageError("grid day count must be non-negative");
    size_ = days * intervals_per_day();
  }

  /// Grid over `[start, end)`; `end - start` must be a multiple of the interval.
  static TimeGrid from_bounds(Timestamp start, Timestamp end, std::chrono::minutes interval) {
    check_interval(interval);
    const Date day = std::chrono::floor<std::chrono::days>(start);
    if (start != Timestamp{day}) throw UsageError("grid start must be at midnight");
    if (end < start || (end - start) % interval != std::chrono::seconds{0}) {
      throw UsageError("grid span is not a whole number of intervals");
    }
    TimeGrid g;
    g.start_ = start;
    g.interval_ = interval;
    g.size_ = (end - start) / interval;
    return g;
  }

  Timestamp start() const { return start_; }
  Timestamp end() const { return start_ + interval_ * size_; }
  std::chrono::minutes interval() const { return interval_; }
  std::int64_t size() const { return size_; }
  int intervals_per_day() const { return static_cast<int>(std::chrono::minutes{std::chrono::days{1}} / interval_); }

  Timestamp time_at(std::int64_t i) const { return start_ + interval_ * i; }

  /// Index of an exact grid point, if any.
  std::optional<std::int64_t> index_of(Timestamp t) const {
    if (t < start_ || t >= end()) return std::nullopt;
    const auto off = t - start_;
    if (off % interval_ != std::chrono::seconds{0}) return std::nullopt;
    return off / interval_;
  }

  /// Nearest grid index and the signed offset of `t` from it.
  std::pair<std::int64_t, std::chrono::seconds> nearest(Timestamp t) const {
    const std::chrono::seconds step = interval_;
    const auto off = (t - start_).count();
    const auto s = step.count();
    std::int64_t idx = off >= 0 ? (off + s / 2) / s : -((-off + s / 2) / s);
    return {idx, std::chrono::seconds{off - idx * s}};
  }

  int slot_of_day(std::int64_t i) const { return static_cast<int>(i % intervals_per_day()); }
  std::int64_t day_index(std::int64_t i) const { return i / intervals_per_day(); }
  std::int64_t day_count() const { return (size_ + intervals_per_day() - 1) / intervals_per_day(); }
  Date first_day() const { return std::chrono::floor<std::chrono::days>(start_); }
  Date date_of(std::int64_t i) const { return first_day() + std::chrono::days{day_index(i)}; }
  Weekday weekday_at(std::int64_t i) const { return weekday_of(date_of(i)); }
  std::int64_t first_index_of_day(std::int64_t day) const { return day * intervals_per_day(); }

  /// Minutes since midnight of slot `slot`.
  int minute_of_slot(int slot) const { return static_cast<int>(slot * interval_.count()); }

  /// Grid index range `[begin, end)` covering the days of `r` clipped to the grid.
  std::pair<std::int64_t, std::int64_t> index_range(const DateRange& r) const {
    const auto d0 = (r.first - first_day()).count();
    const auto d1 = (r.last - first_day()).count() + 1;
    auto clip = [&](std::int64_t v) { return std::clamp<std::int64_t>(v, 0, size_); };
    return {clip(d0 * intervals_per_day()), clip(d1 * intervals_per_day())};
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  static void check_interval(std::chrono::minutes interval) {
    if (interval.count() <= 0 || 1440 % interval.count() != 0) {
      throw UsageError("interval must divide 24 hours");
    }
  }

  Timestamp start_{};
  std::chrono::minutes interval_{3};
  std::int64_t size_ = 0;
};

}  // namespace loopflow
