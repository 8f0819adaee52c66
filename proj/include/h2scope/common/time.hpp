#pragma once

#include <chrono>
#include <cstdint>
#include <string>

namespace h2scope {

using Micros = std::chrono::microseconds;
using UtcTime = std::chrono::sys_time<Micros>;
using SteadyTime = std::chrono::steady_clock::time_point;

UtcTime utc_now();

// Wall-clock reading that never repeats or goes backwards within a process.
UtcTime unique_utc_now();

inline std::int64_t to_us(UtcTime t) { return t.time_since_epoch().count(); }
inline UtcTime utc_from_us(std::int64_t us) { return UtcTime(Micros(us)); }

// "YYYY-MM-DD" in UTC.
std::string utc_date(UtcTime t);

// "YYYY-MM-DDTHH:MM:SS.uuuuuuZ"
std::string iso8601(UtcTime t);

template <typename Rep, typename Period>
std::int64_t count_us(std::chrono::duration<Rep, Period> d) {
  return std::chrono::duration_cast<Micros>(d).count();
}

}  // namespace h2scope
