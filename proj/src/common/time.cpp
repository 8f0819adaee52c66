#include "h2scope/common/time.hpp"

#include <atomic>
#include <ctime>

#include <fmt/format.h>

namespace h2scope {

UtcTime utc_now() {
  return std::chrono::time_point_cast<Micros>(std::chrono::system_clock::now());
}

UtcTime unique_utc_now() {
  static std::atomic<std::int64_t> last{0};
  std::int64_t now = to_us(utc_now());
  std::int64_t prev = last.load(std::memory_order_relaxed);
  for (;;) {
    std::int64_t next = now > prev ? now : prev + 1;
    if (last.compare_exchange_weak(prev, next, std::memory_order_relaxed)) return utc_from_us(next);
  }
}

namespace {

std::tm split(UtcTime t, std::int64_t* micros) {
  std::int64_t us = to_us(t);
  std::int64_t secs = us / 1'000'000;
  std::int64_t rem = us % 1'000'000;
  if (rem < 0) {
    rem += 1'000'000;
    --secs;
  }
  if (micros) *micros = rem;
  std::time_t tt = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  return tm;
}

}  // namespace

std::string utc_date(UtcTime t) {
  std::tm tm = split(t, nullptr);
  return fmt::format("{:04}-{:02}-{:02}", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday);
}

std::string iso8601(UtcTime t) {
  std::int64_t us = 0;
  std::tm tm = split(t, &us);
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:06}Z", tm.tm_year + 1900, tm.tm_mon + 1,
                     tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, us);
}

}  // namespace h2scope
