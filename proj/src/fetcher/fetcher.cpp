#include "h2scope/fetcher/fetcher.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "h2scope/common/error.hpp"
#include "h2scope/http/client.hpp"
#include "h2scope/net/public_suffix.hpp"

namespace h2scope::fetcher {

std::string_view to_string(UserAgent a) noexcept { return a == UserAgent::MOBILE ? "mobile" : "desktop"; }

std::string_view user_agent_string(UserAgent a) noexcept {
  if (a == UserAgent::MOBILE)
    return "Mozilla/5.0 (Linux; Android 14; Pixel 8) AppleWebKit/537.36 (KHTML, like Gecko) "
           "Chrome/124.0 Mobile Safari/537.36 h2scope";
  return "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) Chrome/124.0 Safari/537.36 "
         "h2scope";
}

std::int64_t PageSnapshot::total_bytes() const {
  std::int64_t total = html_bytes;
  for (const auto& o : objects) total += o.size;
  return total;
}

std::size_t PageSnapshot::distinct_hosts() const {
  std::set<std::string> hosts;
  for (const auto& c : connections) hosts.insert(c.domain);
  return hosts.size();
}

namespace {

// The server cannot speak the protocol this page load is pinned to.
struct ProtocolUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Job {
  http::Url url;
  int depth = 0;
  OriginTag tag = OriginTag::HTML_ATTR;
  bool root = false;
  int root_hop = 0;
};

class PageLoad {
 public:
  PageLoad(const FetchConfig& cfg, http::Protocol protocol) : cfg_(cfg), protocol_(protocol) {}

  PageSnapshot run(const std::string& root_url);

 private:
  struct Pool {
    std::deque<Job> queue;
    int workers = 0;
    int idle = 0;
  };
  struct H2Slot {
    bool ready = false;
    std::shared_ptr<http::ClientSession> session;
    std::string conn_id;
    std::string error_kind;
    std::string error_detail;
  };
  struct Outcome {
    http::Response response;
    std::string conn_id;
    Micros t_start{0};
    Micros t_end{0};
  };

  Micros now() const {
    return std::chrono::duration_cast<Micros>(std::chrono::steady_clock::now() - t0_);
  }

  std::string pool_key(const http::Url& u) const { return protocol_ == http::Protocol::H2 ? "*" : u.origin(); }

  // All of the following with mu_ held.
  void enqueue_locked(Job job);
  void enqueue_ref_locked(const std::string& url, int depth, OriginTag tag);
  std::string register_connection_locked(const std::string& host);
  void record_error_locked(const std::string& url, std::string kind, std::string detail);
  void finish_job_locked();

  void worker(std::string key);
  void process(Job job, std::unique_ptr<http::ClientSession>& own, std::string& own_id);
  std::unique_ptr<http::ClientSession> open_session(const http::Url& url);
  std::shared_ptr<http::ClientSession> h2_session(const http::Url& url, std::string& conn_id);
  void on_response(const Job& job, Outcome out);

  const FetchConfig& cfg_;
  http::Protocol protocol_;
  std::chrono::steady_clock::time_point t0_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Pool> pools_;
  std::map<std::string, H2Slot> h2_;
  std::set<std::string> seen_;
  std::vector<std::thread> threads_;
  std::size_t outstanding_ = 0;
  std::size_t embedded_enqueued_ = 0;
  std::size_t capped_ = 0;
  bool done_ = false;
  PageSnapshot snap_;
  std::map<std::string, std::size_t> ledger_index_;
};

void PageLoad::enqueue_locked(Job job) {
  std::string key = pool_key(job.url);
  Pool& p = pools_[key];
  p.queue.push_back(std::move(job));
  ++outstanding_;
  int cap = protocol_ == http::Protocol::H2 ? cfg_.h2_max_in_flight : cfg_.h1_max_conns_per_domain;
  if (p.idle < static_cast<int>(p.queue.size()) && p.workers < cap) {
    ++p.workers;
    threads_.emplace_back(&PageLoad::worker, this, key);
  } else {
    cv_.notify_all();
  }
}

void PageLoad::enqueue_ref_locked(const std::string& url_text, int depth, OriginTag tag) {
  auto url = http::parse_url(url_text);
  if (!url) return;
  if (!seen_.insert(url->str()).second) return;
  if (embedded_enqueued_ >= static_cast<std::size_t>(cfg_.max_objects)) {
    ++capped_;
    return;
  }
  ++embedded_enqueued_;
  enqueue_locked(Job{*url, depth, tag, false, 0});
}

std::string PageLoad::register_connection_locked(const std::string& host) {
  std::string id = "c" + std::to_string(snap_.connections.size() + 1);
  ledger_index_[id] = snap_.connections.size();
  snap_.connections.push_back({id, host, protocol_, 0});
  return id;
}

void PageLoad::record_error_locked(const std::string& url, std::string kind, std::string detail) {
  snap_.fetch_errors.push_back({url, std::move(kind), std::move(detail), now()});
}

void PageLoad::finish_job_locked() {
  if (--outstanding_ == 0) {
    done_ = true;
    cv_.notify_all();
  }
}

std::unique_ptr<http::ClientSession> PageLoad::open_session(const http::Url& url) {
  if (protocol_ == http::Protocol::H2 && !url.is_https())
    throw ProtocolUnavailable("HTTP/2 needs https here: " + url.origin());
  std::vector<std::string> alpn = {protocol_ == http::Protocol::H2 ? "h2" : "http/1.1"};
  http::SessionTimeouts t{cfg_.connect_timeout, cfg_.connect_timeout};
  std::unique_ptr<http::ClientSession> s;
  try {
    s = http::ClientSession::open(cfg_.resolver, url, alpn, t);
  } catch (const net::NetError& e) {
    if (e.errc() == net::NetErrc::NoApplicationProtocol) throw ProtocolUnavailable(e.what());
    throw;
  }
  if (s->protocol() != protocol_)
    throw ProtocolUnavailable(url.origin() + " negotiated " + std::string(http::to_string(s->protocol())));
  return s;
}

std::shared_ptr<http::ClientSession> PageLoad::h2_session(const http::Url& url, std::string& conn_id) {
  std::unique_lock lk(mu_);
  const std::string origin = url.origin();
  auto it = h2_.find(origin);
  if (it == h2_.end()) {
    h2_.emplace(origin, H2Slot{});
    lk.unlock();
    H2Slot filled;
    try {
      filled.session = open_session(url);
    } catch (const ProtocolUnavailable& e) {
      filled.error_kind = "ProtocolUnavailable";
      filled.error_detail = e.what();
    } catch (const net::NetError& e) {
      filled.error_kind = e.errc() == net::NetErrc::Timeout ? "Timeout" : "Network";
      filled.error_detail = e.what();
    }
    lk.lock();
    filled.ready = true;
    if (filled.session) filled.conn_id = register_connection_locked(url.host);
    h2_[origin] = std::move(filled);
    cv_.notify_all();
    it = h2_.find(origin);
  } else {
    cv_.wait(lk, [&] { return h2_[origin].ready; });
  }
  const H2Slot& slot = h2_[origin];
  if (!slot.session) {
    if (slot.error_kind == "ProtocolUnavailable") throw ProtocolUnavailable(slot.error_detail);
    throw net::NetError(slot.error_kind == "Timeout" ? net::NetErrc::Timeout : net::NetErrc::Refused,
                        slot.error_detail);
  }
  conn_id = slot.conn_id;
  return slot.session;
}

void PageLoad::worker(std::string key) {
  std::unique_ptr<http::ClientSession> own;  // HTTP/1.1: this worker's connection
  std::string own_id;
  std::unique_lock lk(mu_);
  for (;;) {
    Pool& p = pools_[key];
    ++p.idle;
    cv_.wait(lk, [&] { return done_ || !pools_[key].queue.empty(); });
    Pool& q = pools_[key];
    --q.idle;
    if (q.queue.empty()) return;
    Job job = std::move(q.queue.front());
    q.queue.pop_front();
    lk.unlock();
    process(std::move(job), own, own_id);
    lk.lock();
    finish_job_locked();
  }
}

void PageLoad::process(Job job, std::unique_ptr<http::ClientSession>& own, std::string& own_id) {
  Outcome out;
  out.t_start = now();
  const std::string url_text = job.url.str();
  try {
    http::Request req = http::make_get(job.url, std::string(user_agent_string(cfg_.user_agent)));
    auto deadline = net::deadline_after(cfg_.per_object_timeout);
    if (protocol_ == http::Protocol::H2) {
      auto session = h2_session(job.url, out.conn_id);
      out.response = session->fetch(req, deadline);
    } else {
      if (!own || !own->reusable()) {
        own.reset();
        own = open_session(job.url);
        std::lock_guard lk(mu_);
        own_id = register_connection_locked(job.url.host);
      }
      out.conn_id = own_id;
      try {
        out.response = own->fetch(req, deadline);
      } catch (...) {
        own.reset();
        throw;
      }
    }
  } catch (const std::exception& e) {
    std::string kind = "Network";
    if (dynamic_cast<const ProtocolUnavailable*>(&e)) kind = "ProtocolUnavailable";
    if (auto* ne = dynamic_cast<const net::NetError*>(&e)) {
      if (ne->errc() == net::NetErrc::Timeout) kind = "Timeout";
      if (ne->errc() == net::NetErrc::NoApplicationProtocol) kind = "ProtocolUnavailable";
    }
    std::lock_guard lk(mu_);
    if (job.root) {
      record_error_locked(url_text, "RootFetchFailed", kind + ": " + e.what());
    } else {
      record_error_locked(url_text, kind, e.what());
    }
    return;
  }
  out.t_end = now();
  if (out.t_end <= out.t_start) out.t_end = out.t_start + Micros(1);
  on_response(job, std::move(out));
}

void PageLoad::on_response(const Job& job, Outcome out) {
  const http::Response& resp = out.response;
  ObjectRecord rec;
  rec.url = job.url.str();
  rec.host = job.url.host;
  rec.domain = net::registrable_or_host(job.url.host);
  rec.status = resp.status;
  rec.size = static_cast<std::int64_t>(resp.body.size());
  rec.content_type = resp.headers.get("content-type").value_or("");
  rec.protocol = protocol_;
  rec.connection_id = out.conn_id;
  rec.t_start = out.t_start;
  rec.t_end = out.t_end;
  rec.origin_tag = job.tag;

  // Parsing happens outside the lock; only the bookkeeping is serialized.
  std::optional<Extraction> found;
  MediaKind kind = media_kind(rec.content_type, job.url.path);
  bool ok = resp.status >= 200 && resp.status < 300;
  if (ok && job.root && kind != MediaKind::Css) found = extract_html(resp.body, job.url);
  if (ok && !job.root && kind == MediaKind::Css && job.depth <= cfg_.max_css_depth)
    found = extract_css(resp.body, job.url);

  std::optional<http::Url> next;
  if (http::is_redirect_status(resp.status)) {
    if (auto loc = resp.headers.get("location")) next = http::resolve_url(job.url, *loc);
  }

  std::lock_guard lk(mu_);
  snap_.connections[ledger_index_.at(out.conn_id)].object_count += 1;
  if (job.root) {
    if (next && job.root_hop < cfg_.max_root_redirects) {
      snap_.root_redirects.push_back(rec);
      if (seen_.insert(next->str()).second) {
        enqueue_locked(Job{*next, 0, OriginTag::HTML_ATTR, true, job.root_hop + 1});
      } else {
        record_error_locked(rec.url, "RootFetchFailed", "redirect loop");
      }
      return;
    }
    if (!ok) {
      snap_.root_redirects.push_back(rec);
      record_error_locked(rec.url, "RootFetchFailed", "status " + std::to_string(resp.status));
      return;
    }
    snap_.html_bytes = rec.size;
    snap_.root = rec;
    if (found) {
      snap_.inline_css_js_bytes = found->inline_css_js_bytes;
      for (const auto& ref : found->refs) {
        if (ref.origin_tag != OriginTag::INLINE) enqueue_ref_locked(ref.url, 1, ref.origin_tag);
      }
    }
    return;
  }
  if (resp.status >= 400) {
    record_error_locked(rec.url, "HttpStatus", "status " + std::to_string(resp.status));
    return;
  }
  snap_.objects.push_back(rec);
  if (next) enqueue_ref_locked(next->str(), job.depth, job.tag);
  if (found) {
    for (const auto& ref : found->refs) enqueue_ref_locked(ref.url, job.depth + 1, ref.origin_tag);
  }
}

PageSnapshot PageLoad::run(const std::string& root_url) {
  snap_.root_url = root_url;
  snap_.protocol = protocol_;
  snap_.user_agent = cfg_.user_agent;
  snap_.started_at = unique_utc_now();
  t0_ = std::chrono::steady_clock::now();

  auto url = http::parse_url(root_url);
  if (!url) {
    snap_.fetch_errors.push_back({root_url, "RootFetchFailed", "not an absolute http(s) URL", Micros(0)});
    return std::move(snap_);
  }
  {
    std::unique_lock lk(mu_);
    seen_.insert(url->str());
    enqueue_locked(Job{*url, 0, OriginTag::HTML_ATTR, true, 0});
    cv_.wait(lk, [&] { return done_; });
  }
  for (;;) {
    std::vector<std::thread> batch;
    {
      std::lock_guard lk(mu_);
      batch.swap(threads_);
    }
    if (batch.empty()) break;
    for (auto& t : batch) t.join();
  }

  if (capped_ > 0)
    snap_.fetch_errors.push_back({"", "ObjectCap", std::to_string(capped_) + " references over the cap", now()});
  for (auto& [origin, slot] : h2_) {
    if (!slot.session) continue;
    for (std::size_t i = 0; i < slot.session->pushes_rejected(); ++i)
      snap_.fetch_errors.push_back({origin, "PushRejected", "server push refused", now()});
    slot.session->close();
  }

  Micros last{0};
  if (snap_.root) last = std::max(last, snap_.root->t_end);
  for (const auto& r : snap_.root_redirects) last = std::max(last, r.t_end);
  for (const auto& o : snap_.objects) last = std::max(last, o.t_end);
  for (const auto& e : snap_.fetch_errors) {
    if (e.kind != "ObjectCap" && e.kind != "PushRejected") last = std::max(last, e.at);
  }
  snap_.plt = last;
  return std::move(snap_);
}

}  // namespace

PageSnapshot fetch_page(const std::string& root_url, http::Protocol protocol, const FetchConfig& cfg) {
  if (cfg.h1_max_conns_per_domain < 1) throw Error(ErrorCode::InvalidArgument, "h1_max_conns_per_domain < 1");
  if (cfg.max_objects < 0) throw Error(ErrorCode::InvalidArgument, "max_objects < 0");
  PageLoad load(cfg, protocol);
  return load.run(root_url);
}

std::vector<PageSnapshot> measure_plt(const std::string& root_url, http::Protocol protocol, const FetchConfig& cfg,
                                      int repetitions) {
  if (repetitions < 1) throw Error(ErrorCode::InvalidArgument, "repetitions must be >= 1");
  std::vector<PageSnapshot> out;
  out.reserve(static_cast<std::size_t>(repetitions));
  for (int i = 0; i < repetitions; ++i) {
    out.push_back(fetch_page(root_url, protocol, cfg));
    spdlog::debug("{} over {} rep {}: plt {} us", root_url, http::to_string(protocol), i + 1,
                  out.back().plt.count());
  }
  return out;
}

namespace {

json object_json(const ObjectRecord& o) {
  return {{"url", o.url},
          {"domain", o.domain},
          {"host", o.host},
          {"status", o.status},
          {"size", o.size},
          {"content_type", o.content_type},
          {"protocol", http::to_string(o.protocol)},
          {"connection_id", o.connection_id},
          {"t_start_us", o.t_start.count()},
          {"t_end_us", o.t_end.count()},
          {"origin_tag", to_string(o.origin_tag)}};
}

http::Protocol protocol_from(const json& j) {
  auto p = http::parse_protocol(j.get<std::string>());
  if (!p) throw Error(ErrorCode::ParseError, "unknown protocol " + j.dump());
  return *p;
}

ObjectRecord object_from(const json& j) {
  ObjectRecord o;
  o.url = j.at("url").get<std::string>();
  o.domain = j.at("domain").get<std::string>();
  o.host = j.value("host", "");
  o.status = j.at("status").get<int>();
  o.size = j.at("size").get<std::int64_t>();
  o.content_type = j.value("content_type", "");
  o.protocol = protocol_from(j.at("protocol"));
  o.connection_id = j.at("connection_id").get<std::string>();
  o.t_start = Micros(j.at("t_start_us").get<std::int64_t>());
  o.t_end = Micros(j.at("t_end_us").get<std::int64_t>());
  const std::string tag = j.value("origin_tag", "HTML_ATTR");
  o.origin_tag = tag == "CSS_URL" ? OriginTag::CSS_URL : tag == "INLINE" ? OriginTag::INLINE : OriginTag::HTML_ATTR;
  return o;
}

}  // namespace

json to_json(const PageSnapshot& s) {
  json objects = json::array();
  for (const auto& o : s.objects) objects.push_back(object_json(o));
  json redirects = json::array();
  for (const auto& o : s.root_redirects) redirects.push_back(object_json(o));
  json conns = json::array();
  for (const auto& c : s.connections)
    conns.push_back({{"connection_id", c.connection_id},
                     {"domain", c.domain},
                     {"protocol", http::to_string(c.protocol)},
                     {"object_count", c.object_count}});
  json errors = json::array();
  for (const auto& e : s.fetch_errors)
    errors.push_back({{"url", e.url}, {"kind", e.kind}, {"detail", e.detail}, {"at_us", e.at.count()}});
  json j;
  j["schema_version"] = kSchemaVersion;
  j["root_url"] = s.root_url;
  j["protocol"] = http::to_string(s.protocol);
  j["user_agent"] = to_string(s.user_agent);
  j["started_at_us"] = to_us(s.started_at);
  j["root"] = s.root ? object_json(*s.root) : json(nullptr);
  j["root_redirects"] = redirects;
  j["objects"] = objects;
  j["inline_css_js_bytes"] = s.inline_css_js_bytes;
  j["html_bytes"] = s.html_bytes;
  j["total_bytes"] = s.total_bytes();
  j["connections"] = conns;
  j["plt_us"] = s.plt.count();
  j["fetch_errors"] = errors;
  return j;
}

PageSnapshot snapshot_from_json(const json& j) {
  check_schema(j);
  try {
    PageSnapshot s;
    s.root_url = j.at("root_url").get<std::string>();
    s.protocol = protocol_from(j.at("protocol"));
    s.user_agent = j.value("user_agent", "desktop") == "mobile" ? UserAgent::MOBILE : UserAgent::DESKTOP;
    s.started_at = utc_from_us(j.at("started_at_us").get<std::int64_t>());
    if (!j.at("root").is_null()) s.root = object_from(j.at("root"));
    for (const auto& o : j.value("root_redirects", json::array())) s.root_redirects.push_back(object_from(o));
    for (const auto& o : j.at("objects")) s.objects.push_back(object_from(o));
    s.inline_css_js_bytes = j.at("inline_css_js_bytes").get<std::int64_t>();
    s.html_bytes = j.at("html_bytes").get<std::int64_t>();
    for (const auto& c : j.at("connections"))
      s.connections.push_back({c.at("connection_id").get<std::string>(), c.at("domain").get<std::string>(),
                               protocol_from(c.at("protocol")), c.at("object_count").get<std::int64_t>()});
    s.plt = Micros(j.at("plt_us").get<std::int64_t>());
    for (const auto& e : j.at("fetch_errors"))
      s.fetch_errors.push_back({e.at("url").get<std::string>(), e.at("kind").get<std::string>(),
                                e.value("detail", ""), Micros(e.value("at_us", std::int64_t{0}))});
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("snapshot: ") + e.what());
  }
}

}  // namespace h2scope::fetcher
