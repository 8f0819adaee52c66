#include "h2scope/coordinator/journal.hpp"

#include <unistd.h>

#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "h2scope/common/error.hpp"

namespace h2scope::coordinator {

namespace fs = std::filesystem;

namespace {

const char* kSnapshot = "snapshot.json";
const char* kLog = "ops.ndjson";

void write_file_atomic(const fs::path& path, const std::string& data) {
  fs::path tmp = path;
  tmp += ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
  bool ok = std::fwrite(data.data(), 1, data.size(), f) == data.size() && std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
  std::fclose(f);
  if (!ok) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
  fs::rename(tmp, path);
}

json snapshot_doc(const SchedulerState& s, std::uint64_t seq) {
  return {{"schema_version", kSchemaVersion}, {"sequence", seq}, {"state", s.to_json()}};
}

}  // namespace

DurableScheduler::DurableScheduler(fs::path dir, SchedulerState state, std::size_t snapshot_every)
    : dir_(std::move(dir)), state_(std::move(state)), snapshot_every_(snapshot_every) {}

DurableScheduler::DurableScheduler(DurableScheduler&& o) noexcept
    : dir_(std::move(o.dir_)),
      state_(std::move(o.state_)),
      snapshot_every_(o.snapshot_every_),
      seq_(o.seq_),
      since_snapshot_(o.since_snapshot_),
      replayed_(o.replayed_),
      log_(std::exchange(o.log_, nullptr)) {}

DurableScheduler::~DurableScheduler() {
  if (log_) std::fclose(log_);
}

bool DurableScheduler::exists(const fs::path& dir) { return fs::exists(dir / kSnapshot); }

void DurableScheduler::open_log() {
  if (log_) std::fclose(log_);
  log_ = std::fopen((dir_ / kLog).c_str(), "ab");
  if (!log_) throw Error(ErrorCode::IoError, "cannot open " + (dir_ / kLog).string());
}

DurableScheduler DurableScheduler::create(const fs::path& dir, std::vector<TaskSkeleton> chunks, SchedulerConfig cfg,
                                          std::size_t snapshot_every) {
  fs::create_directories(dir);
  DurableScheduler d(dir, SchedulerState(std::move(chunks), cfg), snapshot_every);
  write_file_atomic(dir / kSnapshot, snapshot_doc(d.state_, 0).dump());
  fs::remove(dir / kLog);
  d.open_log();
  return d;
}

DurableScheduler DurableScheduler::recover(const fs::path& dir, std::size_t snapshot_every) {
  std::ifstream in(dir / kSnapshot, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "no snapshot in " + dir.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json snap = json::parse(ss.str(), nullptr, false);
  if (snap.is_discarded()) throw Error(ErrorCode::ParseError, "corrupt snapshot in " + dir.string());
  check_schema(snap);
  DurableScheduler d(dir, SchedulerState::from_json(snap.at("state")), snapshot_every);
  d.seq_ = snap.at("sequence").get<std::uint64_t>();

  std::ifstream log(dir / kLog, std::ios::binary);
  std::string line;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    json op = json::parse(line, nullptr, false);
    // A torn final line is what a crash mid-append leaves behind.
    if (op.is_discarded()) {
      spdlog::warn("ignoring torn log entry in {}", (dir / kLog).string());
      break;
    }
    auto seq = op.at("seq").get<std::uint64_t>();
    if (seq <= d.seq_) continue;
    UtcTime now = utc_from_us(op.at("now_us").get<std::int64_t>());
    const std::string kind = op.at("op").get<std::string>();
    if (kind == "next_task") {
      d.state_.next_task(worker_health_from_json(op.at("worker")), now);
    } else if (kind == "report") {
      d.state_.handle_report(report_from_json(op.at("report")), now);
    } else if (kind == "reassign") {
      d.state_.reassign_stragglers(now);
    } else {
      throw Error(ErrorCode::ParseError, "unknown log op " + kind);
    }
    d.seq_ = seq;
    ++d.replayed_;
  }
  d.open_log();
  d.compact();
  return d;
}

void DurableScheduler::log(json op) {
  op["seq"] = ++seq_;
  std::string line = op.dump();
  line += '\n';
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0 ||
      ::fsync(fileno(log_)) != 0)
    throw Error(ErrorCode::IoError, "appending to operation log");
  if (++since_snapshot_ >= snapshot_every_) compact();
}

void DurableScheduler::compact() {
  write_file_atomic(dir_ / kSnapshot, snapshot_doc(state_, seq_).dump());
  // Entries up to seq_ are now covered by the snapshot.
  std::fclose(log_);
  log_ = std::fopen((dir_ / kLog).c_str(), "wb");
  if (!log_) throw Error(ErrorCode::IoError, "cannot reset operation log");
  since_snapshot_ = 0;
}

std::optional<TaskAssignment> DurableScheduler::next_task(const WorkerHealth& worker, UtcTime now) {
  auto t = state_.next_task(worker, now);
  if (t) log({{"op", "next_task"}, {"now_us", to_us(now)}, {"worker", to_json(worker)}});
  return t;
}

ReportOutcome DurableScheduler::handle_report(const WorkerReport& report, UtcTime now) {
  auto before_dups = state_.duplicates();
  auto outcome = state_.handle_report(report, now);
  // Rejections change nothing. Duplicates only bump a counter, which the
  // log keeps so replay matches.
  if (outcome == ReportOutcome::Accepted || state_.duplicates() != before_dups) {
    json r = to_json(report);
    if (outcome != ReportOutcome::Accepted) r["records"] = json::array();
    log({{"op", "report"}, {"now_us", to_us(now)}, {"report", r}});
  }
  return outcome;
}

std::vector<TaskAssignment> DurableScheduler::reassign_stragglers(UtcTime now) {
  auto out = state_.reassign_stragglers(now);
  if (!out.empty()) log({{"op", "reassign"}, {"now_us", to_us(now)}});
  return out;
}

}  // namespace h2scope::coordinator
