#include "h2scope/bench/bench.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <variant>

#include <spdlog/spdlog.h>

#include "h2scope/common/error.hpp"
#include "h2scope/net/socket.hpp"

namespace h2scope::bench {

void NetworkScenario::validate() const {
  if (label.empty()) throw Error(ErrorCode::InvalidArgument, "scenario without a label");
  if (loss_pct && !(*loss_pct >= 0 && *loss_pct <= 100))
    throw Error(ErrorCode::InvalidArgument, "loss_pct outside [0, 100] in " + label);
  if (bandwidth_kbps && *bandwidth_kbps <= 0)
    throw Error(ErrorCode::InvalidArgument, "bandwidth_kbps must be positive in " + label);
  if (extra_delay_ms && *extra_delay_ms < 0)
    throw Error(ErrorCode::InvalidArgument, "extra_delay_ms must not be negative in " + label);
}

std::vector<NetworkScenario> default_scenarios() {
  std::vector<NetworkScenario> s(5);
  s[0].label = "baseline";
  s[1].label = "1mbps";
  s[1].bandwidth_kbps = 1000;
  s[2].label = "delay-100ms";
  s[2].extra_delay_ms = 100;
  s[3].label = "loss-0.5pct";
  s[3].loss_pct = 0.5;
  s[4].label = "plausible mobile";
  s[4].bandwidth_kbps = 1000;
  s[4].loss_pct = 2.0;
  return s;
}

// --- scenario files ---------------------------------------------------------

namespace {

[[noreturn]] void parse_fail(int line, const std::string& msg) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

using Value = std::variant<std::string, std::int64_t, double, bool>;

// Parses one value and returns it with the rest of the line.
std::pair<Value, std::string_view> parse_value(std::string_view s, int line) {
  if (s.empty()) parse_fail(line, "missing value");
  if (s.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < s.size() && s[i] != '"'; ++i) {
      if (s[i] != '\\') {
        out += s[i];
        continue;
      }
      if (++i == s.size()) break;
      switch (s[i]) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: parse_fail(line, std::string("unsupported escape \\") + s[i]);
      }
    }
    if (i >= s.size()) parse_fail(line, "unterminated string");
    return {out, s.substr(i + 1)};
  }
  if (s.front() == '\'') {
    auto end = s.find('\'', 1);
    if (end == std::string_view::npos) parse_fail(line, "unterminated string");
    return {std::string(s.substr(1, end - 1)), s.substr(end + 1)};
  }
  auto end = s.find_first_of(" \t#");
  std::string_view tok = s.substr(0, end);
  std::string_view rest = end == std::string_view::npos ? std::string_view{} : s.substr(end);
  if (tok == "true") return {true, rest};
  if (tok == "false") return {false, rest};
  std::string digits;
  for (char c : tok)
    if (c != '_') digits += c;
  std::int64_t iv = 0;
  auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), iv);
  if (ec == std::errc() && p == digits.data() + digits.size()) return {iv, rest};
  double dv = 0;
  auto [p2, ec2] = std::from_chars(digits.data(), digits.data() + digits.size(), dv);
  if (ec2 == std::errc() && p2 == digits.data() + digits.size()) return {dv, rest};
  parse_fail(line, "cannot parse value '" + std::string(tok) + "'");
}

std::int64_t as_int(const Value& v, const std::string& key, int line) {
  if (auto* i = std::get_if<std::int64_t>(&v)) return *i;
  parse_fail(line, key + " must be an integer");
}

double as_real(const Value& v, const std::string& key, int line) {
  if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (auto* d = std::get_if<double>(&v)) return *d;
  parse_fail(line, key + " must be a number");
}

std::string as_string(const Value& v, const std::string& key, int line) {
  if (auto* s = std::get_if<std::string>(&v)) return *s;
  parse_fail(line, key + " must be a string");
}

}  // namespace

std::vector<NetworkScenario> parse_scenarios(std::string_view text) {
  std::vector<NetworkScenario> out;
  std::vector<int> starts;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      auto close = line.find("]]");
      if (line.substr(0, 2) != "[[" || close == std::string_view::npos) parse_fail(line_no, "only [[scenario]] tables are supported");
      if (trim(line.substr(2, close - 2)) != "scenario") parse_fail(line_no, "unknown table " + std::string(line));
      auto tail = trim(line.substr(close + 2));
      if (!tail.empty() && tail.front() != '#') parse_fail(line_no, "trailing characters after table header");
      out.emplace_back();
      starts.push_back(line_no);
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) parse_fail(line_no, "expected key = value");
    if (out.empty()) parse_fail(line_no, "key outside a [[scenario]] table");
    std::string key(trim(line.substr(0, eq)));
    auto [value, rest] = parse_value(trim(line.substr(eq + 1)), line_no);
    rest = trim(rest);
    if (!rest.empty() && rest.front() != '#') parse_fail(line_no, "trailing characters after value");
    auto& s = out.back();
    if (key == "label") {
      s.label = as_string(value, key, line_no);
    } else if (key == "bandwidth_kbps") {
      s.bandwidth_kbps = as_int(value, key, line_no);
    } else if (key == "extra_delay_ms") {
      s.extra_delay_ms = as_int(value, key, line_no);
    } else if (key == "loss_pct") {
      s.loss_pct = as_real(value, key, line_no);
    } else if (key == "setup_hook") {
      s.setup_hook = as_string(value, key, line_no);
    } else if (key == "teardown_hook") {
      s.teardown_hook = as_string(value, key, line_no);
    } else {
      parse_fail(line_no, "unknown key " + key);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    try {
      out[i].validate();
    } catch (const Error& e) {
      parse_fail(starts[i], e.what());
    }
  }
  return out;
}

std::vector<NetworkScenario> load_scenarios(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenarios(ss.str());
}

// --- matrix -----------------------------------------------------------------

std::filesystem::path default_lock_path() {
  const char* dir = std::getenv("XDG_RUNTIME_DIR");
  if (!dir || !*dir) dir = std::getenv("TMPDIR");
  if (!dir || !*dir) dir = "/tmp";
  return std::filesystem::path(dir) / ("h2scope-bench-" + std::to_string(::getuid()) + ".lock");
}

std::string site_url(const std::string& site) {
  if (site.find("://") != std::string::npos) return site;
  return "https://" + site + "/";
}

Micros mean_of(std::span<const Micros> samples) {
  if (samples.empty()) return Micros(0);
  std::int64_t sum = 0;
  for (auto s : samples) sum += s.count();
  return Micros(sum / static_cast<std::int64_t>(samples.size()));
}

namespace {

class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::IoError, "cannot open lock " + path.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::ConcurrentRun, "another benchmark run holds " + path.string());
    }
  }
  ~RunLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  int fd_ = -1;
};

void set_env(const char* name, const std::optional<std::string>& value) {
  if (value)
    ::setenv(name, value->c_str(), 1);
  else
    ::unsetenv(name);
}

// Runs |cmd| through /bin/sh with the scenario exported. Throws HookFailed.
void run_hook(const std::string& cmd, const NetworkScenario& s, const char* which) {
  if (cmd.empty()) return;
  set_env("H2SCOPE_SCENARIO", s.label);
  set_env("H2SCOPE_BANDWIDTH_KBPS", s.bandwidth_kbps ? std::optional(std::to_string(*s.bandwidth_kbps)) : std::nullopt);
  set_env("H2SCOPE_EXTRA_DELAY_MS", s.extra_delay_ms ? std::optional(std::to_string(*s.extra_delay_ms)) : std::nullopt);
  set_env("H2SCOPE_LOSS_PCT", s.loss_pct ? std::optional(fmt::format("{}", *s.loss_pct)) : std::nullopt);
  int rc = std::system(cmd.c_str());
  if (rc == -1) throw Error(ErrorCode::HookFailed, fmt::format("{} hook for {} could not start", which, s.label));
  if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0)
    throw Error(ErrorCode::HookFailed,
                fmt::format("{} hook for {} exited with {}", which, s.label, WIFEXITED(rc) ? WEXITSTATUS(rc) : -1));
}

fixtures::LinkProfile profile_of(const NetworkScenario& s, std::uint64_t seed) {
  fixtures::LinkProfile p;
  p.bandwidth_kbps = s.bandwidth_kbps;
  p.extra_delay_ms = s.extra_delay_ms.value_or(0);
  p.loss_pct = s.loss_pct.value_or(0.0);
  p.seed = seed;
  return p;
}

}  // namespace

MatrixRun run_matrix(const std::vector<std::string>& sites, const std::vector<NetworkScenario>& scenarios,
                     const std::vector<http::Protocol>& protocols, const MatrixOptions& opts) {
  if (opts.repetitions < 1) throw Error(ErrorCode::InvalidArgument, "repetitions must be at least 1");
  if (protocols.empty()) throw Error(ErrorCode::InvalidArgument, "no protocols to benchmark");
  for (const auto& s : scenarios) s.validate();
  RunLock lock(opts.lock_path.empty() ? default_lock_path() : opts.lock_path);

  auto emit = [&](BenchEvent ev) {
    if (opts.observer) opts.observer(ev);
  };

  MatrixRun run;
  std::uint64_t seed = opts.seed;
  for (const auto& scenario : scenarios) {
    emit({BenchEventKind::Setup, scenario.label, {}, http::Protocol::H1, 0, true});
    std::optional<std::string> setup_error;
    try {
      run_hook(scenario.setup_hook, scenario, "setup");
      if (opts.link) opts.link->configure(profile_of(scenario, seed++));
    } catch (const Error& e) {
      setup_error = e.what();
    }

    if (!setup_error) {
      for (const auto& site : sites) {
        const std::string url = site_url(site);
        std::vector<BenchResult> cells;
        for (auto p : protocols) cells.push_back(BenchResult{site, scenario.label, p, {}, {}, Micros(0), 0});
        for (int rep = 0; rep < opts.repetitions; ++rep) {
          // Alternate the leading protocol so neither always goes first.
          for (std::size_t k = 0; k < protocols.size(); ++k) {
            std::size_t idx = rep % 2 == 0 ? k : protocols.size() - 1 - k;
            auto& cell = cells[idx];
            bool ok = false;
            try {
              auto snaps = fetcher::measure_plt(url, cell.protocol, opts.fetch, 1);
              const auto& snap = snaps.front();
              if (!snap.root_failed()) {
                cell.plt_samples.push_back(snap.plt);
                cell.sample_starts.push_back(snap.started_at);
                ok = true;
              }
            } catch (const std::exception& e) {
              spdlog::warn("{} over {} under {}: {}", site, http::to_string(cell.protocol), scenario.label, e.what());
            }
            if (!ok) ++cell.failures;
            emit({BenchEventKind::Sample, scenario.label, site, cell.protocol, rep, ok});
          }
        }
        for (auto& cell : cells) {
          cell.mean_plt = mean_of(cell.plt_samples);
          run.results.push_back(std::move(cell));
        }
      }
    }

    try {
      if (opts.link) opts.link->configure({});
      run_hook(scenario.teardown_hook, scenario, "teardown");
    } catch (const Error& e) {
      if (!setup_error) setup_error = e.what();
      spdlog::error("{}", e.what());
    }
    emit({BenchEventKind::Teardown, scenario.label, {}, http::Protocol::H1, 0, !setup_error});
    if (setup_error) {
      spdlog::error("scenario {} aborted: {}", scenario.label, *setup_error);
      run.aborted.push_back({scenario.label, *setup_error});
    }
  }
  return run;
}

// --- comparison -------------------------------------------------------------

Comparison compare(std::span<const BenchResult> results) {
  using Key = std::pair<std::string, std::string>;  // scenario, site
  std::map<Key, std::pair<const BenchResult*, const BenchResult*>> cells;
  for (const auto& r : results) {
    auto& slot = cells[{r.scenario, r.site}];
    auto& side = r.protocol == http::Protocol::H1 ? slot.first : slot.second;
    if (side)
      throw Error(ErrorCode::InvalidArgument,
                  fmt::format("duplicate result for {} / {} / {}", r.site, r.scenario, http::to_string(r.protocol)));
    side = &r;
  }
  Comparison c;
  std::vector<double> deltas;
  for (const auto& [key, pair] : cells) {
    auto [h1, h2] = pair;
    if (!h1 || !h2 || h1->plt_samples.empty() || h2->plt_samples.empty()) continue;
    ComparisonRow row{key.second, key.first, mean_of(h1->plt_samples), mean_of(h2->plt_samples), Micros(0)};
    row.delta = row.mean_h1 - row.mean_h2;
    deltas.push_back(static_cast<double>(row.delta.count()) / 1000.0);
    c.rows.push_back(std::move(row));
  }
  if (c.rows.empty()) throw Error(ErrorCode::NoPairedResults, "no cell has samples for both protocols");
  c.delta_ms = analyzer::summarize_values(std::move(deltas), "delta_plt_ms");
  return c;
}

// --- json -------------------------------------------------------------------

json to_json(const NetworkScenario& s) {
  json j;
  j["label"] = s.label;
  j["bandwidth_kbps"] = s.bandwidth_kbps ? json(*s.bandwidth_kbps) : json(nullptr);
  j["extra_delay_ms"] = s.extra_delay_ms ? json(*s.extra_delay_ms) : json(nullptr);
  j["loss_pct"] = s.loss_pct ? json(*s.loss_pct) : json(nullptr);
  j["setup_hook"] = s.setup_hook;
  j["teardown_hook"] = s.teardown_hook;
  return j;
}

json to_json(const BenchResult& r) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["site"] = r.site;
  j["scenario"] = r.scenario;
  j["protocol"] = http::to_string(r.protocol);
  json samples = json::array();
  for (auto s : r.plt_samples) samples.push_back(s.count());
  j["plt_samples_us"] = samples;
  json starts = json::array();
  for (auto t : r.sample_starts) starts.push_back(to_us(t));
  j["sample_starts_us"] = starts;
  j["mean_plt_us"] = r.mean_plt.count();
  j["failures"] = r.failures;
  return j;
}

BenchResult bench_result_from_json(const json& j) {
  check_schema(j);
  try {
    BenchResult r;
    r.site = j.at("site").get<std::string>();
    r.scenario = j.at("scenario").get<std::string>();
    auto p = http::parse_protocol(j.at("protocol").get<std::string>());
    if (!p) throw Error(ErrorCode::ParseError, "bad protocol in bench result");
    r.protocol = *p;
    for (const auto& s : j.at("plt_samples_us")) r.plt_samples.emplace_back(s.get<std::int64_t>());
    if (j.contains("sample_starts_us"))
      for (const auto& s : j.at("sample_starts_us")) r.sample_starts.push_back(utc_from_us(s.get<std::int64_t>()));
    r.mean_plt = Micros(j.at("mean_plt_us").get<std::int64_t>());
    r.failures = j.at("failures").get<int>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bench result: ") + e.what());
  }
}

json to_json(const Comparison& c) {
  json rows = json::array();
  for (const auto& r : c.rows)
    rows.push_back({{"site", r.site},
                    {"scenario", r.scenario},
                    {"mean_h1_us", r.mean_h1.count()},
                    {"mean_h2_us", r.mean_h2.count()},
                    {"delta_us", r.delta.count()}});
  return {{"schema_version", kSchemaVersion}, {"rows", rows}, {"delta_ms", analyzer::to_json(c.delta_ms)}};
}

}  // namespace h2scope::bench
