#include "h2scope/http/h2_connection.hpp"

#include <fcntl.h>
#include <poll.h>
#include <unistd.h>

#include <algorithm>

namespace h2scope::http {

using net::NetErrc;
using net::NetError;
using namespace h2;

namespace {

constexpr std::size_t kOutHighWater = 64 * 1024;

bool is_connection_specific(const std::string& name) {
  return name == "connection" || name == "keep-alive" || name == "proxy-connection" ||
         name == "transfer-encoding" || name == "upgrade" || name == "host" || name == "http2-settings";
}

}  // namespace

H2Connection::H2Connection(Role role, std::unique_ptr<net::Transport> transport, Options opts)
    : role_(role), transport_(std::move(transport)), opts_(opts) {
  if (::pipe2(wake_fds_, O_NONBLOCK | O_CLOEXEC) != 0) throw NetError(NetErrc::Reset, "pipe2 failed");
}

H2Connection::~H2Connection() {
  close();
  if (io_.joinable()) io_.join();
  for (int fd : wake_fds_) {
    if (fd >= 0) ::close(fd);
  }
}

std::shared_ptr<H2Connection> H2Connection::connect_client(std::unique_ptr<net::Transport> transport) {
  return connect_client(std::move(transport), Options{});
}

std::shared_ptr<H2Connection> H2Connection::connect_client(std::unique_ptr<net::Transport> transport, Options opts) {
  std::shared_ptr<H2Connection> c(new H2Connection(Role::Client, std::move(transport), opts));
  c->start_preface(std::nullopt);
  c->io_ = std::thread([raw = c.get()] { raw->run(); });
  return c;
}

void H2Connection::serve(std::unique_ptr<net::Transport> transport, Handler handler, Options opts,
                         std::optional<Request> upgraded, std::string preread) {
  H2Connection c(Role::Server, std::move(transport), opts);
  c.handler_ = std::move(handler);
  if (!preread.empty()) c.reader_.feed(preread);
  c.start_preface(std::move(upgraded));
  c.run();
}

void H2Connection::wake() {
  char b = 1;
  [[maybe_unused]] auto n = ::write(wake_fds_[1], &b, 1);
}

void H2Connection::close() {
  stop_.store(true);
  wake();
}

std::future<Response> H2Connection::submit(Request req) {
  Submission sub{std::move(req), {}};
  auto fut = sub.promise.get_future();
  if (!usable()) {
    sub.promise.set_exception(std::make_exception_ptr(NetError(NetErrc::Closed, "HTTP/2 connection not usable")));
    return fut;
  }
  {
    std::lock_guard lk(mu_);
    submissions_.push_back(std::move(sub));
  }
  wake();
  return fut;
}

void H2Connection::start_preface(std::optional<Request> upgraded) {
  if (role_ == Role::Client) {
    out_.append(kClientPreface);
    out_ += encode_settings({{SettingId::EnablePush, 0},
                             {SettingId::MaxConcurrentStreams, opts_.max_concurrent_streams},
                             {SettingId::InitialWindowSize, opts_.initial_window}});
    if (opts_.initial_window > kDefaultWindow)
      out_ += encode_window_update(0, opts_.initial_window - kDefaultWindow);
  } else {
    out_ += encode_settings({{SettingId::MaxConcurrentStreams, opts_.max_concurrent_streams},
                             {SettingId::InitialWindowSize, opts_.initial_window}});
    if (opts_.initial_window > kDefaultWindow)
      out_ += encode_window_update(0, opts_.initial_window - kDefaultWindow);
    if (upgraded) {
      Stream& s = streams_[1];
      s.id = 1;
      s.send_window = peer_initial_window_;
      s.request = std::move(*upgraded);
      last_peer_stream_ = 1;
      dispatch(s);
    }
  }
}

void H2Connection::run() noexcept {
  try {
    loop();
    fail_all(NetError(NetErrc::Closed, "HTTP/2 connection closed"));
  } catch (const NetError& e) {
    fail_all(e);
  } catch (const std::exception& e) {
    fail_all(NetError(NetErrc::Malformed, e.what()));
  }
  closed_.store(true);
  if (transport_) transport_->close();
}

std::size_t H2Connection::active_client_streams() const {
  return static_cast<std::size_t>(std::count_if(streams_.begin(), streams_.end(),
                                                [](const auto& kv) { return kv.second.has_promise; }));
}

void H2Connection::loop() {
  auto last_activity = std::chrono::steady_clock::now();
  for (;;) {
    char drain[64];
    while (::read(wake_fds_[0], drain, sizeof(drain)) > 0) {
    }
    if (stop_.load() && !goaway_sent_) {
      out_ += encode_goaway(last_peer_stream_, ErrorCode::NoError);
      goaway_sent_ = true;
      goaway_.store(true);
    }
    if (role_ == Role::Client) take_submissions();
    if (read_available()) last_activity = std::chrono::steady_clock::now();
    if (role_ == Role::Server) pump_data();
    write_available();
    if (peer_closed_) return;
    if (goaway_sent_ && out_.empty()) return;
    if (goaway_.load() && streams_.empty() && out_.empty()) return;

    auto idle_for = std::chrono::steady_clock::now() - last_activity;
    if (streams_.empty() && idle_for > opts_.idle_timeout) {
      stop_.store(true);
      continue;
    }
    bool sendable = false;
    if (role_ == Role::Server && conn_send_window_ > 0) {
      for (const auto& [id, s] : streams_) {
        if (s.sending && s.send_window > 0) {
          sendable = true;
          break;
        }
      }
    }
    bool want_write = !out_.empty() || sendable;
    pollfd fds[2] = {{transport_->fd(), static_cast<short>(POLLIN | (want_write ? POLLOUT : 0)), 0},
                     {wake_fds_[0], POLLIN, 0}};
    int rc = ::poll(fds, 2, 1000);
    if (rc < 0 && errno != EINTR) throw NetError(NetErrc::Reset, "poll failed");
    if (rc > 0 && (fds[0].revents & (POLLERR | POLLNVAL))) {
      // Let the next read surface the concrete error or EOF.
      if (!read_available()) return;
    }
  }
}

void H2Connection::take_submissions() {
  std::deque<Submission> ready;
  {
    std::lock_guard lk(mu_);
    while (!submissions_.empty() && active_client_streams() + ready.size() < peer_max_streams_) {
      ready.push_back(std::move(submissions_.front()));
      submissions_.pop_front();
    }
  }
  for (auto& sub : ready) {
    if (goaway_.load()) {
      sub.promise.set_exception(std::make_exception_ptr(NetError(NetErrc::Closed, "connection going away")));
      continue;
    }
    std::uint32_t id = next_stream_id_;
    next_stream_id_ += 2;
    const Request& req = sub.request;
    HeaderList hl{{":method", req.method}, {":scheme", req.scheme}, {":authority", req.authority}, {":path", req.target}};
    for (const auto& [k, v] : req.headers) {
      if (!is_connection_specific(k)) hl.emplace_back(k, v);
    }
    Stream& s = streams_[id];
    s.id = id;
    s.has_promise = true;
    s.promise = std::move(sub.promise);
    s.send_window = peer_initial_window_;
    emit_headers(id, encoder_.encode(hl), req.body.empty());
    if (!req.body.empty()) {
      std::string_view body = req.body;
      while (!body.empty()) {
        std::size_t n = std::min<std::size_t>(body.size(), peer_max_frame_);
        out_ += encode_frame(FrameType::Data, n == body.size() ? flags::kEndStream : 0, id, body.substr(0, n));
        body.remove_prefix(n);
      }
    }
  }
}

void H2Connection::emit_headers(std::uint32_t stream_id, const std::string& block, bool end_stream) {
  std::string_view rest = block;
  std::uint8_t first_flags = end_stream ? flags::kEndStream : 0;
  std::size_t n = std::min<std::size_t>(rest.size(), peer_max_frame_);
  bool last = n == rest.size();
  out_ += encode_frame(FrameType::Headers, first_flags | (last ? flags::kEndHeaders : 0), stream_id, rest.substr(0, n));
  rest.remove_prefix(n);
  while (!rest.empty()) {
    n = std::min<std::size_t>(rest.size(), peer_max_frame_);
    last = n == rest.size();
    out_ += encode_frame(FrameType::Continuation, last ? flags::kEndHeaders : 0, stream_id, rest.substr(0, n));
    rest.remove_prefix(n);
  }
}

bool H2Connection::read_available() {
  bool any = false;
  char buf[32 * 1024];
  for (;;) {
    net::IoResult r = transport_->read_some(buf);
    if (r.status == net::IoStatus::Eof) {
      peer_closed_ = true;
      break;
    }
    if (r.status != net::IoStatus::Ok) break;
    any = true;
    reader_.feed(std::string_view(buf, r.n));
  }
  if (role_ == Role::Server && !preface_received_) {
    if (!reader_.consume_preface()) return any;
    preface_received_ = true;
  }
  while (auto f = reader_.next()) handle_frame(*f);
  return any;
}

void H2Connection::write_available() {
  while (!out_.empty()) {
    net::IoResult r = transport_->write_some(out_);
    if (r.status == net::IoStatus::Ok) {
      out_.erase(0, r.n);
      continue;
    }
    if (r.status == net::IoStatus::Eof) peer_closed_ = true;
    break;
  }
}

void H2Connection::handle_frame(const Frame& f) {
  if (cont_stream_ != 0 && f.type != FrameType::Continuation)
    throw NetError(NetErrc::Malformed, "expected CONTINUATION");
  switch (f.type) {
    case FrameType::Settings: on_settings(f); break;
    case FrameType::Ping:
      if (!f.has(flags::kAck)) out_ += encode_frame(FrameType::Ping, flags::kAck, 0, f.payload);
      break;
    case FrameType::GoAway: on_goaway(f); break;
    case FrameType::WindowUpdate: {
      if (f.payload.size() != 4) throw NetError(NetErrc::Malformed, "bad WINDOW_UPDATE");
      std::uint32_t inc = read_u32(f.payload) & 0x7fffffffu;
      if (f.stream_id == 0) {
        conn_send_window_ += inc;
      } else if (auto it = streams_.find(f.stream_id); it != streams_.end()) {
        it->second.send_window += inc;
      }
      break;
    }
    case FrameType::RstStream:
      if (auto it = streams_.find(f.stream_id); it != streams_.end()) {
        std::uint32_t code = f.payload.size() >= 4 ? read_u32(f.payload) : 0;
        fail_stream(it->second, NetError(NetErrc::Reset, "stream reset, code " + std::to_string(code)));
        streams_.erase(it);
      }
      break;
    case FrameType::Headers: {
      if (f.stream_id == 0) throw NetError(NetErrc::Malformed, "HEADERS on stream 0");
      cont_block_.assign(frame_fragment(f));
      cont_end_stream_ = f.has(flags::kEndStream);
      cont_is_push_ = false;
      if (f.has(flags::kEndHeaders)) {
        on_header_block(f.stream_id, cont_block_, cont_end_stream_);
      } else {
        cont_stream_ = f.stream_id;
      }
      break;
    }
    case FrameType::PushPromise: {
      if (role_ == Role::Server) throw NetError(NetErrc::Malformed, "PUSH_PROMISE sent by client");
      std::string_view p = f.payload;
      if (f.has(flags::kPadded)) p.remove_prefix(1);
      if (p.size() < 4) throw NetError(NetErrc::Malformed, "short PUSH_PROMISE");
      cont_promised_ = read_u32(p) & 0x7fffffffu;
      cont_block_.assign(frame_fragment(f));
      cont_is_push_ = true;
      if (f.has(flags::kEndHeaders)) {
        on_header_block(f.stream_id, cont_block_, false);
      } else {
        cont_stream_ = f.stream_id;
      }
      break;
    }
    case FrameType::Continuation: {
      if (cont_stream_ == 0 || f.stream_id != cont_stream_) throw NetError(NetErrc::Malformed, "stray CONTINUATION");
      cont_block_ += f.payload;
      if (f.has(flags::kEndHeaders)) {
        std::uint32_t sid = cont_stream_;
        cont_stream_ = 0;
        on_header_block(sid, cont_block_, cont_end_stream_);
      }
      break;
    }
    case FrameType::Data: on_data(f); break;
    default: break;
  }
}

void H2Connection::on_settings(const Frame& f) {
  if (f.has(flags::kAck)) return;
  if (f.payload.size() % 6 != 0) throw NetError(NetErrc::Malformed, "bad SETTINGS length");
  std::string_view p = f.payload;
  while (!p.empty()) {
    auto id = static_cast<std::uint16_t>((static_cast<unsigned char>(p[0]) << 8) | static_cast<unsigned char>(p[1]));
    std::uint32_t value = read_u32(p.substr(2));
    p.remove_prefix(6);
    switch (static_cast<SettingId>(id)) {
      case SettingId::HeaderTableSize: encoder_.set_peer_max_size(value); break;
      case SettingId::MaxConcurrentStreams: peer_max_streams_ = std::max<std::uint32_t>(value, 1); break;
      case SettingId::InitialWindowSize: {
        std::int64_t delta = static_cast<std::int64_t>(value) - static_cast<std::int64_t>(peer_initial_window_);
        peer_initial_window_ = value;
        for (auto& [id2, s] : streams_) s.send_window += delta;
        break;
      }
      case SettingId::MaxFrameSize:
        if (value >= kDefaultMaxFrame && value <= 0xffffff) peer_max_frame_ = value;
        break;
      default: break;
    }
  }
  out_ += encode_frame(FrameType::Settings, flags::kAck, 0, {});
}

void H2Connection::on_goaway(const Frame& f) {
  goaway_.store(true);
  std::uint32_t last = f.payload.size() >= 4 ? read_u32(f.payload) & 0x7fffffffu : 0;
  if (role_ != Role::Client) return;
  for (auto it = streams_.begin(); it != streams_.end();) {
    if (it->first > last) {
      fail_stream(it->second, NetError(NetErrc::Closed, "stream refused by GOAWAY"));
      it = streams_.erase(it);
    } else {
      ++it;
    }
  }
}

void H2Connection::on_header_block(std::uint32_t stream_id, const std::string& block, bool end_stream) {
  HeaderList fields = decoder_.decode(block);
  if (cont_is_push_) {
    cont_is_push_ = false;
    out_ += encode_rst_stream(cont_promised_, ErrorCode::RefusedStream);
    pushes_rejected_.fetch_add(1);
    return;
  }
  if (role_ == Role::Client) {
    auto it = streams_.find(stream_id);
    if (it == streams_.end()) return;
    Stream& s = it->second;
    if (!s.final_headers) {
      int status = 0;
      HeaderMap headers;
      for (const auto& [k, v] : fields) {
        if (k == ":status") {
          status = std::atoi(v.c_str());
        } else if (!k.empty() && k[0] != ':') {
          headers.add(k, v);
        }
      }
      if (status == 0) throw NetError(NetErrc::Malformed, "response without :status");
      if (status >= 100 && status < 200) return;
      s.final_headers = true;
      s.response.status = status;
      s.response.headers = std::move(headers);
    }
    if (end_stream) finish_client_stream(stream_id);
    return;
  }
  // Server: a new request stream.
  if (stream_id % 2 == 0 || stream_id <= last_peer_stream_) {
    if (auto it = streams_.find(stream_id); it != streams_.end() && end_stream) dispatch(it->second);
    return;
  }
  last_peer_stream_ = stream_id;
  Stream& s = streams_[stream_id];
  s.id = stream_id;
  s.send_window = peer_initial_window_;
  for (const auto& [k, v] : fields) {
    if (k == ":method") {
      s.request.method = v;
    } else if (k == ":scheme") {
      s.request.scheme = v;
    } else if (k == ":authority") {
      s.request.authority = v;
    } else if (k == ":path") {
      s.request.target = v;
    } else if (!k.empty() && k[0] != ':') {
      s.request.headers.add(k, v);
    }
  }
  if (s.request.authority.empty()) s.request.authority = s.request.headers.get("host").value_or("");
  if (end_stream) dispatch(s);
}

void H2Connection::on_data(const Frame& f) {
  std::string_view data = frame_fragment(f);
  conn_recv_unacked_ += static_cast<std::uint32_t>(f.payload.size());
  if (conn_recv_unacked_ >= opts_.initial_window / 2) {
    out_ += encode_window_update(0, conn_recv_unacked_);
    conn_recv_unacked_ = 0;
  }
  auto it = streams_.find(f.stream_id);
  if (it == streams_.end()) return;
  Stream& s = it->second;
  if (role_ == Role::Client) {
    s.response.body.append(data);
  } else {
    s.request.body.append(data);
  }
  if (f.has(flags::kEndStream)) {
    if (role_ == Role::Client) {
      finish_client_stream(f.stream_id);
    } else {
      dispatch(s);
    }
    return;
  }
  s.recv_unacked += static_cast<std::uint32_t>(f.payload.size());
  if (s.recv_unacked >= opts_.initial_window / 2) {
    out_ += encode_window_update(f.stream_id, s.recv_unacked);
    s.recv_unacked = 0;
  }
}

void H2Connection::finish_client_stream(std::uint32_t id) {
  auto it = streams_.find(id);
  if (it == streams_.end()) return;
  if (it->second.has_promise) it->second.promise.set_value(std::move(it->second.response));
  streams_.erase(it);
}

void H2Connection::dispatch(Stream& s) {
  Response resp;
  try {
    resp = handler_ ? handler_(s.request) : Response{404, {}, {}};
  } catch (const std::exception& e) {
    resp = Response{500, {}, e.what()};
  }
  HeaderList hl{{":status", std::to_string(resp.status)}};
  for (const auto& [k, v] : resp.headers) {
    if (!is_connection_specific(k) && k != "content-length") hl.emplace_back(k, v);
  }
  hl.emplace_back("content-length", std::to_string(resp.body.size()));
  bool no_body = resp.body.empty() || s.request.method == "HEAD";
  emit_headers(s.id, encoder_.encode(hl), no_body);
  if (no_body) {
    std::uint32_t id = s.id;
    streams_.erase(id);
    return;
  }
  s.out_body = std::move(resp.body);
  s.out_offset = 0;
  s.sending = true;
}

void H2Connection::pump_data() {
  while (out_.size() < kOutHighWater && conn_send_window_ > 0) {
    // Round-robin across streams with pending bodies.
    auto it = streams_.upper_bound(last_pumped_);
    Stream* pick = nullptr;
    for (std::size_t scanned = 0; scanned < streams_.size(); ++scanned) {
      if (it == streams_.end()) it = streams_.begin();
      if (it->second.sending && it->second.send_window > 0) {
        pick = &it->second;
        break;
      }
      ++it;
    }
    if (!pick) return;
    std::size_t remaining = pick->out_body.size() - pick->out_offset;
    auto n = static_cast<std::size_t>(std::min<std::int64_t>(
        {static_cast<std::int64_t>(remaining), static_cast<std::int64_t>(peer_max_frame_), conn_send_window_,
         pick->send_window}));
    bool last = n == remaining;
    out_ += encode_frame(FrameType::Data, last ? flags::kEndStream : 0, pick->id,
                         std::string_view(pick->out_body).substr(pick->out_offset, n));
    pick->out_offset += n;
    pick->send_window -= static_cast<std::int64_t>(n);
    conn_send_window_ -= static_cast<std::int64_t>(n);
    last_pumped_ = pick->id;
    if (last) {
      std::uint32_t id = pick->id;
      streams_.erase(id);
    }
  }
}

void H2Connection::fail_stream(Stream& s, const NetError& err) {
  if (s.has_promise) {
    s.promise.set_exception(std::make_exception_ptr(err));
    s.has_promise = false;
  }
}

void H2Connection::fail_all(const NetError& err) {
  closed_.store(true);
  for (auto& [id, s] : streams_) fail_stream(s, err);
  streams_.clear();
  std::deque<Submission> pending;
  {
    std::lock_guard lk(mu_);
    pending.swap(submissions_);
  }
  for (auto& sub : pending) sub.promise.set_exception(std::make_exception_ptr(err));
}

}  // namespace h2scope::http
