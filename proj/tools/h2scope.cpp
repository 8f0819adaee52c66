// h2scope command-line front end.

#include <unistd.h>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "h2scope/analyzer/analyzer.hpp"
#include "h2scope/bench/bench.hpp"
#include "h2scope/common/error.hpp"
#include "h2scope/common/json_io.hpp"
#include "h2scope/common/parallel.hpp"
#include "h2scope/coordinator/cluster.hpp"
#include "h2scope/fetcher/fetcher.hpp"
#include "h2scope/fixtures/corpus.hpp"
#include "h2scope/net/public_suffix.hpp"
#include "h2scope/prober/prober.hpp"
#include "h2scope/report/report.hpp"
#include "h2scope/verifier/verifier.hpp"

namespace fs = std::filesystem;
using namespace h2scope;

namespace {

constexpr int kOk = 0;
constexpr int kPartial = 1;
constexpr int kFatal = 2;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::signal(SIGPIPE, SIG_IGN);
}

struct Globals {
  std::string out;
  std::string log_level = "info";
  bool schema_check = false;
  std::vector<std::string> resolve;
};

net::Resolver make_resolver(const Globals& g) {
  net::Resolver r;
  for (const auto& spec : g.resolve) r.add_override_spec(spec);
  return r;
}

// Writes to a file, or stdout when the path is empty or "-".
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (path.empty() || path == "-") return;
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) throw Error(ErrorCode::IoError, "cannot write " + path);
  }
  void line(const json& j) {
    std::lock_guard lk(mu_);
    write_ndjson_line(stream(), j);
    stream().flush();
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::mutex mu_;
  std::ofstream file_;
};

std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(s.back())) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(s[i])) ++i;
  return s.substr(i);
}

// One host per line, a rank,domain CSV, or NDJSON records with a "host" field.
// With |h2_only|, JSON records that carry an announced list must announce h2.
std::vector<std::string> read_targets(const std::string& path, bool h2_only = false) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (path != "-") {
    file.open(path);
    if (!file) throw Error(ErrorCode::IoError, "cannot read " + path);
    in = &file;
  }
  std::vector<std::string> out;
  std::string line;
  while (std::getline(*in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line[0] == '{') {
      json j = json::parse(line);
      if (h2_only && j.contains("announced") && !prober::probe_record_from_json(j).announces_h2()) continue;
      out.push_back(j.at("host").get<std::string>());
      continue;
    }
    if (auto comma = line.rfind(','); comma != std::string::npos) line = trim(line.substr(comma + 1));
    if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = line.substr(1, line.size() - 2);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

// Reads schema-versioned NDJSON. Foreign versions are fatal under
// --schema-check and skipped otherwise.
template <typename T, typename Parse>
std::vector<T> load_records(const std::vector<std::string>& paths, const Globals& g, Parse parse, int& status) {
  std::vector<T> out;
  for (const auto& p : paths) {
    std::size_t skipped = 0;
    for (const auto& j : read_ndjson_file(p)) {
      try {
        check_schema(j);
      } catch (const Error&) {
        if (g.schema_check) throw;
        ++skipped;
        continue;
      }
      out.push_back(parse(j));
    }
    if (skipped > 0) {
      spdlog::warn("{}: skipped {} records with a foreign schema_version", p, skipped);
      status = kPartial;
    }
  }
  return out;
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
  std::vector<std::string> out;
  for (const auto& in : inputs) {
    if (!fs::is_directory(in)) {
      out.push_back(in);
      continue;
    }
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(in)) {
      auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".ndjson" || ext == ".json" || ext == ".jsonl"))
        found.push_back(e.path().string());
    }
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

void wait_for_signal() {
  while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

// ---- probe ----

struct ProbeArgs {
  std::string input;
  std::vector<std::string> hosts;
  std::uint16_t port = 443;
  std::size_t parallel = 20;
  std::string offer;
  bool no_cleartext = false;
  bool no_quic = false;
  bool no_npn = false;
  bool www = false;
};

int run_probe(const ProbeArgs& a, const Globals& g) {
  auto targets = a.hosts;
  if (!a.input.empty()) {
    auto more = read_targets(a.input);
    targets.insert(targets.end(), more.begin(), more.end());
  }
  if (targets.empty()) throw Error(ErrorCode::EmptyInput, "no hosts to probe");
  prober::ProbeConfig cfg;
  if (!a.offer.empty()) cfg.offered_protocols = split_list(a.offer);
  cfg.check_cleartext = !a.no_cleartext;
  cfg.check_quic = !a.no_quic;
  cfg.try_npn = !a.no_npn;
  cfg.www_prefix = a.www;
  cfg.resolver = make_resolver(g);
  Sink sink(g.out);
  std::atomic<std::size_t> errors{0};
  bounded_for_each(targets.size(), a.parallel, [&](std::size_t i) {
    auto rec = prober::probe_host(targets[i], a.port, cfg);
    if (rec.error) ++errors;
    sink.line(prober::to_json(rec));
  });
  spdlog::info("probed {} hosts, {} failed", targets.size(), errors.load());
  return errors > 0 ? kPartial : kOk;
}

// ---- verify ----

struct VerifyArgs {
  std::string input;
  std::vector<std::string> hosts;
  std::uint16_t port = 443;
  std::size_t parallel = verifier::kDefaultParallel;
  int max_redirects = 10;
};

int run_verify(const VerifyArgs& a, const Globals& g) {
  auto targets = a.hosts;
  if (!a.input.empty()) {
    auto more = read_targets(a.input, true);
    targets.insert(targets.end(), more.begin(), more.end());
  }
  if (targets.empty()) throw Error(ErrorCode::EmptyInput, "no hosts to verify");
  verifier::VerifyConfig cfg;
  cfg.port = a.port;
  cfg.max_redirects = a.max_redirects;
  cfg.resolver = make_resolver(g);
  Sink sink(g.out);
  std::size_t serving = 0, failed = 0;
  verifier::verify_many(targets, cfg, a.parallel, [&](const verifier::VerdictRecord& v) {
    if (v.serves_h2) ++serving;
    if (v.classification == verifier::Classification::NETWORK_ERROR ||
        v.classification == verifier::Classification::PROTOCOL_ERROR)
      ++failed;
    sink.line(verifier::to_json(v));
  });
  spdlog::info("verified {} hosts: {} serve h2, {} failed", targets.size(), serving, failed);
  return failed > 0 ? kPartial : kOk;
}

// ---- fetch ----

struct FetchArgs {
  std::vector<std::string> urls;
  std::string input;
  std::string protocol = "h2";
  int repeat = 1;
  std::string agent = "desktop";
  int max_objects = 500;
};

fetcher::UserAgent parse_agent(const std::string& s) {
  if (s == "desktop") return fetcher::UserAgent::DESKTOP;
  if (s == "mobile") return fetcher::UserAgent::MOBILE;
  throw Error(ErrorCode::InvalidArgument, "agent must be desktop or mobile");
}

http::Protocol require_protocol(const std::string& s) {
  auto p = http::parse_protocol(s);
  if (!p) throw Error(ErrorCode::InvalidArgument, "unknown protocol '" + s + "'");
  return *p;
}

int run_fetch(const FetchArgs& a, const Globals& g) {
  auto urls = a.urls;
  if (!a.input.empty())
    for (const auto& s : read_targets(a.input)) urls.push_back(bench::site_url(s));
  if (urls.empty()) throw Error(ErrorCode::EmptyInput, "no URL to fetch");
  fetcher::FetchConfig cfg;
  cfg.user_agent = parse_agent(a.agent);
  cfg.max_objects = a.max_objects;
  cfg.resolver = make_resolver(g);
  auto proto = require_protocol(a.protocol);
  Sink sink(g.out);
  int status = kOk;
  for (const auto& url : urls) {
    for (const auto& snap : fetcher::measure_plt(url, proto, cfg, a.repeat)) {
      if (snap.root_failed() || !snap.fetch_errors.empty()) status = kPartial;
      spdlog::info("{} over {}: {} objects, plt {} ms", url, http::to_string(proto), snap.objects.size(),
                   snap.plt.count() / 1000);
      sink.line(fetcher::to_json(snap));
    }
  }
  return status;
}

// ---- analyze ----

struct AnalyzeArgs {
  std::vector<std::string> snapshots;
  std::string cdf;
  std::string cdf_dir;
  std::string summary;
  std::vector<std::string> stability;
};

std::string metric_alias(const std::string& name) {
  static const std::map<std::string, std::string> kAliases = {
      {"objects", "object_count"},    {"domains", "distinct_domains"},  {"hosts", "distinct_hosts"},
      {"connections", "connection_count"}, {"bytes", "total_bytes"},     {"inline", "inline_ratio"},
      {"plt", "plt_ms"},              {"consistency", "protocol_consistency"}};
  auto it = kAliases.find(name);
  return it == kAliases.end() ? name : it->second;
}

void write_cdf_csv(const fs::path& path, const analyzer::DistributionSummary& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "value,cumulative_fraction\n";
  for (const auto& [v, f] : s.cdf_points) out << fmt::format("{},{}\n", v, f);
}

int run_analyze(const AnalyzeArgs& a, const Globals& g) {
  int status = kOk;
  if (!a.stability.empty()) {
    if (a.stability.size() != 2) throw Error(ErrorCode::InvalidArgument, "--stability takes two metric files");
    auto week_a = load_records<analyzer::MetricVector>({a.stability[0]}, g, analyzer::metric_vector_from_json, status);
    auto week_b = load_records<analyzer::MetricVector>({a.stability[1]}, g, analyzer::metric_vector_from_json, status);
    Sink sink(g.out);
    sink.line(analyzer::to_json(analyzer::stability_report(week_a, week_b)));
    return status;
  }
  auto files = expand_inputs(a.snapshots);
  if (files.empty()) throw Error(ErrorCode::EmptyInput, "no snapshot files");
  auto snaps = load_records<fetcher::PageSnapshot>(files, g, fetcher::snapshot_from_json, status);
  std::vector<analyzer::MetricVector> metrics;
  Sink sink(g.out);
  for (const auto& s : snaps) {
    try {
      metrics.push_back(analyzer::compute_metrics(s));
      sink.line(analyzer::to_json(metrics.back()));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateSnapshot) throw;
      spdlog::warn("{}", e.what());
      status = kPartial;
    }
  }
  spdlog::info("{} snapshots, {} metric vectors", snaps.size(), metrics.size());
  if (!a.cdf.empty()) {
    fs::path dir = a.cdf_dir;
    if (dir.empty()) dir = (g.out.empty() || g.out == "-") ? fs::path(".") : fs::path(g.out).parent_path();
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    for (const auto& name : split_list(a.cdf)) {
      auto metric = metric_alias(name);
      auto path = dir / ("cdf_" + metric + ".csv");
      write_cdf_csv(path, analyzer::summarize(metrics, metric));
      spdlog::info("wrote {}", path.string());
    }
  }
  if (!a.summary.empty()) {
    Sink out(a.summary);
    for (const auto& m : analyzer::metric_names()) out.line(analyzer::to_json(analyzer::summarize(metrics, m)));
  }
  return status;
}

// ---- bench ----

struct BenchArgs {
  std::string sites;
  std::string scenarios;
  std::string protocols = "h1,h2";
  int repeat = 3;
  std::string agent = "desktop";
  std::string comparison;
  std::string lock;
};

int run_bench(const BenchArgs& a, const Globals& g) {
  auto sites = read_targets(a.sites);
  if (sites.empty()) throw Error(ErrorCode::EmptyInput, "no sites");
  auto scenarios = a.scenarios.empty() ? bench::default_scenarios() : bench::load_scenarios(a.scenarios);
  std::vector<http::Protocol> protocols;
  for (const auto& p : split_list(a.protocols)) protocols.push_back(require_protocol(p));
  bench::MatrixOptions opts;
  opts.repetitions = a.repeat;
  opts.fetch.user_agent = parse_agent(a.agent);
  opts.fetch.resolver = make_resolver(g);
  opts.lock_path = a.lock;
  opts.observer = [](const bench::BenchEvent& e) {
    if (e.kind == bench::BenchEventKind::Sample)
      spdlog::debug("{} {} {} #{} {}", e.scenario, e.site, http::to_string(e.protocol), e.repetition,
                    e.ok ? "ok" : "failed");
    else
      spdlog::info("{} hook for {} {}", e.kind == bench::BenchEventKind::Setup ? "setup" : "teardown", e.scenario,
                   e.ok ? "ok" : "failed");
  };
  auto run = bench::run_matrix(sites, scenarios, protocols, opts);
  Sink sink(g.out);
  int status = run.aborted.empty() ? kOk : kPartial;
  for (const auto& r : run.results) {
    if (r.failures > 0) status = kPartial;
    sink.line(bench::to_json(r));
  }
  for (const auto& ab : run.aborted) spdlog::warn("scenario {} aborted: {}", ab.scenario, ab.detail);
  if (!a.comparison.empty()) {
    try {
      Sink cmp(a.comparison);
      cmp.line(bench::to_json(bench::compare(run.results)));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoPairedResults) throw;
      spdlog::warn("{}", e.what());
      status = kPartial;
    }
  }
  return status;
}

// ---- report ----

struct ReportArgs {
  std::vector<std::string> probes;
  std::vector<std::string> verdicts;
  std::vector<std::string> metrics;
  std::vector<std::string> series;
  std::vector<std::string> bench;
  std::string merge_map;
  std::string format = "csv";
};

int run_report(const ReportArgs& a, const Globals& g) {
  int status = kOk;
  report::ExportFormat format;
  if (a.format == "csv")
    format = report::ExportFormat::CSV;
  else if (a.format == "json")
    format = report::ExportFormat::JSON;
  else
    throw Error(ErrorCode::InvalidArgument, "format must be csv or json");
  report::ExportBundle bundle;
  bundle.metrics = load_records<analyzer::MetricVector>(expand_inputs(a.metrics), g,
                                                        analyzer::metric_vector_from_json, status);
  bundle.series = load_records<report::AdoptionPoint>(expand_inputs(a.series), g, report::adoption_point_from_json,
                                                      status);
  bundle.bench = load_records<bench::BenchResult>(expand_inputs(a.bench), g, bench::bench_result_from_json, status);
  auto probes =
      load_records<prober::ProbeRecord>(expand_inputs(a.probes), g, prober::probe_record_from_json, status);
  auto verdicts =
      load_records<verifier::VerdictRecord>(expand_inputs(a.verdicts), g, verifier::verdict_from_json, status);
  if (!probes.empty()) {
    auto series = report::adoption_series(report::group_probes_by_date(probes),
                                          report::group_verdicts_by_date(verdicts));
    bundle.series.insert(bundle.series.end(), series.begin(), series.end());
  }
  // Organizations behind h2: hosts verified serving, or announcing when no verdicts were given.
  report::MergeMap merge;
  if (!a.merge_map.empty()) merge = report::load_merge_map(a.merge_map);
  std::set<std::string> serving;
  for (const auto& v : verdicts)
    if (v.serves_h2) serving.insert(v.host);
  std::set<std::string> seen;
  for (const auto& p : probes) {
    bool counts = verdicts.empty() ? p.announces_h2() : serving.count(p.host) > 0;
    if (!counts || !seen.insert(p.host).second) continue;
    try {
      bundle.orgs.push_back(report::attribute_org(p.host, p.cert_org, merge));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoAttributionSource) throw;
      spdlog::warn("{}", e.what());
      status = kPartial;
    }
  }
  fs::path dir = (g.out.empty() || g.out == "-") ? fs::path("report") : fs::path(g.out);
  for (const auto& path : report::export_reports(bundle, format, dir)) spdlog::info("wrote {}", path.string());
  return status;
}

// ---- master / worker ----

struct MasterArgs {
  std::string targets;
  std::string listen = ":7070";
  std::size_t chunk_size = coordinator::kDefaultChunkSize;
  double bootstrap_s = 300;
  double floor_s = 30;
  std::size_t snapshot_every = 256;
  bool no_resume = false;
};

std::pair<std::string, std::uint16_t> split_host_port(const std::string& s, const std::string& default_host) {
  auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error(ErrorCode::InvalidArgument, "expected host:port, got '" + s + "'");
  std::string host = s.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    port = -1;
  }
  if (port < 0 || port > 65535) throw Error(ErrorCode::InvalidArgument, "bad port in '" + s + "'");
  return {host.empty() ? default_host : host, static_cast<std::uint16_t>(port)};
}

int run_master(const MasterArgs& a, const Globals& g) {
  auto targets = read_targets(a.targets);
  coordinator::MasterConfig cfg;
  std::tie(cfg.listen_address, cfg.port) = split_host_port(a.listen, "*");
  cfg.out_dir = (g.out.empty() || g.out == "-") ? fs::path("results") : fs::path(g.out);
  cfg.chunk_size = a.chunk_size;
  cfg.scheduler.bootstrap_timeout = Micros(static_cast<std::int64_t>(a.bootstrap_s * 1e6));
  cfg.scheduler.timeout_floor = Micros(static_cast<std::int64_t>(a.floor_s * 1e6));
  cfg.snapshot_every = a.snapshot_every;
  cfg.resume = !a.no_resume;
  coordinator::Master master(targets, cfg);
  spdlog::info("master listening on {}:{} with {} targets", cfg.listen_address, master.port(), targets.size());
  bool finished = false;
  while (!g_stop.load() && !(finished = master.wait_finished(std::chrono::milliseconds(500)))) {
  }
  if (finished) {
    // Give workers a moment to collect their final bye.
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  master.stop();
  auto path = master.write_results();
  spdlog::info("wrote {} ({} reissues)", path.string(), master.reissued().size());
  return finished ? kOk : kPartial;
}

struct WorkerArgs {
  std::string master = "127.0.0.1:7070";
  std::size_t parallel = 20;
  std::string id;
  std::uint16_t port = 443;
};

int run_worker_cmd(const WorkerArgs& a, const Globals& g) {
  coordinator::WorkerConfig cfg;
  std::tie(cfg.master_host, cfg.master_port) = split_host_port(a.master, "127.0.0.1");
  cfg.parallel = a.parallel;
  cfg.worker_id = a.id;
  if (cfg.worker_id.empty()) {
    char name[256] = {};
    gethostname(name, sizeof(name) - 1);
    cfg.worker_id = fmt::format("{}-{}", name, getpid());
  }
  cfg.probe.resolver = make_resolver(g);
  auto probe_cfg = cfg.probe;
  auto port = a.port;
  cfg.probe_fn = [probe_cfg, port](const std::string& host) { return prober::probe_host(host, port, probe_cfg); };
  auto stats = coordinator::run_worker(cfg, g_stop);
  spdlog::info("worker {}: {} tasks, {} hosts, last bye '{}'", cfg.worker_id, stats.tasks, stats.hosts_probed,
               stats.last_bye);
  return stats.last_bye == coordinator::bye::kFinished || g_stop.load() ? kOk : kPartial;
}

// ---- fixtures ----

struct FixtureArgs {
  int hosts = 20;
  int serving = 1;
  int domains = 4;
  int objects = 20;
  int chain_certs = 0;
  std::optional<std::int64_t> bandwidth_kbps;
  std::int64_t delay_ms = 0;
  double loss_pct = 0;
  std::vector<std::string> alpn;
};

void print_resolve(const std::string& host, std::uint16_t port) {
  std::cout << "resolve " << host << ":0=127.0.0.1:" << port << '\n';
}

void write_hosts(const std::string& out, const std::vector<std::string>& hosts) {
  if (out.empty() || out == "-") return;
  Sink sink(out);
  for (const auto& h : hosts) sink.stream() << h << '\n';
}

int run_fixture_fleet(const FixtureArgs& a, const Globals& g) {
  fixtures::AnnounceServeFleet fleet(a.hosts, a.serving);
  for (const auto& h : fleet.hosts()) {
    print_resolve(h, fleet.port());
    if (std::find(fleet.serving_hosts().begin(), fleet.serving_hosts().end(), h) == fleet.serving_hosts().end())
      print_resolve("legacy." + h, fleet.legacy_port());
  }
  write_hosts(g.out, fleet.hosts());
  std::cout << "ready" << std::endl;
  wait_for_signal();
  return kOk;
}

int run_fixture_page(const FixtureArgs& a, const Globals& g) {
  fixtures::CorpusOptions opts;
  opts.extra_chain_certs = a.chain_certs;
  if (a.bandwidth_kbps || a.delay_ms > 0 || a.loss_pct > 0) {
    fixtures::LinkProfile profile;
    profile.bandwidth_kbps = a.bandwidth_kbps;
    profile.extra_delay_ms = a.delay_ms;
    profile.loss_pct = a.loss_pct;
    opts.link = std::make_shared<fixtures::LinkEmulator>(profile);
  }
  fixtures::Corpus corpus(opts);
  fixtures::PageLayout layout;
  for (int i = 0; i < a.domains; ++i)
    layout.domains.push_back(i == 0 ? "www.page.test" : fmt::format("cdn{}.page.test", i));
  layout.root_host = layout.domains.front();
  layout.objects = a.objects;
  auto page = corpus.add_page(layout);
  for (const auto& h : page.hosts) print_resolve(h, corpus.port());
  std::cout << "url " << page.root_url << std::endl;
  write_hosts(g.out, {layout.root_host});
  std::cout << "ready" << std::endl;
  wait_for_signal();
  return kOk;
}

int run_fixture_announce(const FixtureArgs& a, const Globals& g) {
  if (a.alpn.empty()) throw Error(ErrorCode::InvalidArgument, "give at least one --alpn list");
  std::vector<std::unique_ptr<fixtures::FixtureServer>> servers;
  std::vector<std::string> hosts;
  for (std::size_t i = 0; i < a.alpn.size(); ++i) {
    fixtures::FixtureServerOptions opts;
    opts.alpn = split_list(a.alpn[i]);
    opts.alpn_fatal_on_mismatch = false;
    servers.push_back(std::make_unique<fixtures::FixtureServer>(opts));
    hosts.push_back(fmt::format("announce{}.fixture.test", i + 1));
    servers.back()->route("", "/", {200, "text/html", "<html><body>fixture</body></html>", {}});
    print_resolve(hosts.back(), servers.back()->port());
  }
  write_hosts(g.out, hosts);
  std::cout << "ready" << std::endl;
  wait_for_signal();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"h2scope: HTTP/2 adoption and performance measurement"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--out", g.out, "Output file, or directory for report and master ('-' is stdout)");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, off")->capture_default_str();
  app.add_flag("--schema-check", g.schema_check, "Treat any record with a foreign schema_version as fatal");
  app.add_option("--resolve", g.resolve, "Pin a name: host:port=addr:port or host:port:addr (port 0 = any)");

  ProbeArgs pa;
  auto* probe = app.add_subcommand("probe", "Discover announced application protocols");
  probe->add_option("--input,-i", pa.input, "Host list (plain, rank,domain CSV, or NDJSON)");
  probe->add_option("hosts", pa.hosts, "Hosts to probe");
  probe->add_option("--port", pa.port)->capture_default_str();
  probe->add_option("--parallel", pa.parallel)->capture_default_str()->check(CLI::PositiveNumber);
  probe->add_option("--offer", pa.offer, "Comma-separated tokens to offer, most preferred first");
  probe->add_flag("--no-cleartext", pa.no_cleartext, "Skip the cleartext upgrade check");
  probe->add_flag("--no-quic", pa.no_quic, "Skip the QUIC advertisement check");
  probe->add_flag("--no-npn", pa.no_npn, "Skip the NPN fallback handshake");
  probe->add_flag("--www", pa.www, "Probe www.<host> instead of the bare name");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Check whether hosts serve their root page over h2");
  verify->add_option("--input,-i", va.input, "Probe NDJSON (only h2 announcers are kept) or host list");
  verify->add_option("hosts", va.hosts, "Hosts to verify");
  verify->add_option("--port", va.port)->capture_default_str();
  verify->add_option("--parallel", va.parallel)->capture_default_str()->check(CLI::PositiveNumber);
  verify->add_option("--max-redirects", va.max_redirects)->capture_default_str()->check(CLI::NonNegativeNumber);

  FetchArgs fa;
  auto* fetch = app.add_subcommand("fetch", "Download pages and record snapshots");
  fetch->add_option("--url,-u", fa.urls, "Page URL (repeatable)");
  fetch->add_option("--input,-i", fa.input, "Site list");
  fetch->add_option("--protocol", fa.protocol, "h1 or h2")->capture_default_str();
  fetch->add_option("--repeat", fa.repeat)->capture_default_str()->check(CLI::PositiveNumber);
  fetch->add_option("--agent", fa.agent, "desktop or mobile")->capture_default_str();
  fetch->add_option("--max-objects", fa.max_objects)->capture_default_str()->check(CLI::PositiveNumber);

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "Turn snapshots into metric vectors and distributions");
  analyze->add_option("--snapshots,-s", aa.snapshots, "Snapshot NDJSON files or directories");
  analyze->add_option("--cdf", aa.cdf, "Comma-separated metrics to write as value,cumulative_fraction CSV");
  analyze->add_option("--cdf-dir", aa.cdf_dir, "Directory for CDF tables (default: next to --out)");
  analyze->add_option("--summary", aa.summary, "Write per-metric summaries as NDJSON");
  analyze->add_option("--stability", aa.stability, "Compare two metric files week-over-week")->expected(2);

  BenchArgs ba;
  auto* benchc = app.add_subcommand("bench", "Page load time matrix over network scenarios");
  benchc->add_option("--sites", ba.sites, "Site list")->required();
  benchc->add_option("--scenarios", ba.scenarios, "Scenario file (defaults when omitted)");
  benchc->add_option("--protocols", ba.protocols)->capture_default_str();
  benchc->add_option("--repeat", ba.repeat)->capture_default_str()->check(CLI::PositiveNumber);
  benchc->add_option("--agent", ba.agent)->capture_default_str();
  benchc->add_option("--comparison", ba.comparison, "Write the h1 vs h2 comparison as JSON");
  benchc->add_option("--lock", ba.lock, "Lock file guarding against concurrent runs");

  ReportArgs ra;
  auto* reportc = app.add_subcommand("report", "Adoption series, organizations and plot-ready tables");
  reportc->add_option("--probes", ra.probes, "Probe NDJSON files or directories");
  reportc->add_option("--verdicts", ra.verdicts, "Verdict NDJSON files or directories");
  reportc->add_option("--metrics", ra.metrics, "Metric NDJSON files or directories");
  reportc->add_option("--series", ra.series, "Adoption point NDJSON files");
  reportc->add_option("--bench", ra.bench, "Bench result NDJSON files");
  reportc->add_option("--merge-map", ra.merge_map, "JSON object mapping organization names");
  reportc->add_option("--format", ra.format, "csv or json")->capture_default_str();

  MasterArgs ma;
  auto* master = app.add_subcommand("master", "Distribute a probe sweep over workers");
  master->add_option("--targets", ma.targets, "Target list")->required();
  master->add_option("--listen", ma.listen, "[address]:port")->capture_default_str();
  master->add_option("--chunk-size", ma.chunk_size)->capture_default_str()->check(CLI::Range(1, 100));
  master->add_option("--bootstrap-timeout", ma.bootstrap_s, "Seconds before the first completion")
      ->capture_default_str();
  master->add_option("--timeout-floor", ma.floor_s, "Lower bound on the straggler timeout, seconds")
      ->capture_default_str();
  master->add_option("--snapshot-every", ma.snapshot_every)->capture_default_str();
  master->add_flag("--no-resume", ma.no_resume, "Ignore saved state in the output directory");

  WorkerArgs wa;
  auto* worker = app.add_subcommand("worker", "Probe chunks handed out by a master");
  worker->add_option("--master", wa.master, "host:port")->capture_default_str();
  worker->add_option("--parallel", wa.parallel)->capture_default_str()->check(CLI::PositiveNumber);
  worker->add_option("--id", wa.id, "Worker id (default hostname-pid)");
  worker->add_option("--port", wa.port, "Port to probe")->capture_default_str();

  FixtureArgs xa;
  auto* fixturesc = app.add_subcommand("fixtures", "Run local test servers until interrupted");
  fixturesc->require_subcommand(1);
  auto* fleet = fixturesc->add_subcommand("fleet", "Hosts announcing h2, few serving it");
  fleet->add_option("--hosts", xa.hosts)->capture_default_str()->check(CLI::PositiveNumber);
  fleet->add_option("--serving", xa.serving)->capture_default_str()->check(CLI::NonNegativeNumber);
  auto* page = fixturesc->add_subcommand("page", "One sharded page, optionally behind a shaped link");
  page->add_option("--domains", xa.domains)->capture_default_str()->check(CLI::PositiveNumber);
  page->add_option("--objects", xa.objects)->capture_default_str()->check(CLI::NonNegativeNumber);
  page->add_option("--chain-certs", xa.chain_certs)->capture_default_str();
  page->add_option("--bandwidth-kbps", xa.bandwidth_kbps);
  page->add_option("--delay-ms", xa.delay_ms)->capture_default_str();
  page->add_option("--loss-pct", xa.loss_pct)->capture_default_str();
  auto* announce = fixturesc->add_subcommand("announce", "One server per ALPN list");
  announce->add_option("--alpn", xa.alpn, "Comma-separated list (repeatable)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kFatal;
  }

  auto logger = spdlog::stderr_color_mt("h2scope");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));
  install_signal_handlers();

  try {
    if (*probe) return run_probe(pa, g);
    if (*verify) return run_verify(va, g);
    if (*fetch) return run_fetch(fa, g);
    if (*analyze) return run_analyze(aa, g);
    if (*benchc) return run_bench(ba, g);
    if (*reportc) return run_report(ra, g);
    if (*master) return run_master(ma, g);
    if (*worker) return run_worker_cmd(wa, g);
    if (*fleet) return run_fixture_fleet(xa, g);
    if (*page) return run_fixture_page(xa, g);
    if (*announce) return run_fixture_announce(xa, g);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFatal;
  }
  return kFatal;
}
