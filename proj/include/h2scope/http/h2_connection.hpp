#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "h2scope/http/h2_frame.hpp"
#include "h2scope/http/hpack.hpp"
#include "h2scope/http/message.hpp"
#include "h2scope/net/transport.hpp"

namespace h2scope::http {

// One HTTP/2 connection driven by a single I/O loop. As a client the loop
// runs on an internal thread and requests are multiplexed from any thread
// via submit(); as a server serve() runs the loop on the caller's thread.
class H2Connection {
 public:
  struct Options {
    std::uint32_t initial_window = 1u << 24;
    std::uint32_t max_concurrent_streams = 128;
    std::chrono::milliseconds idle_timeout{60'000};
  };
  using Handler = std::function<Response(const Request&)>;

  static std::shared_ptr<H2Connection> connect_client(std::unique_ptr<net::Transport> transport);
  static std::shared_ptr<H2Connection> connect_client(std::unique_ptr<net::Transport> transport, Options opts);

  // Serves until the peer goes away. |upgraded| is the HTTP/1.1 request that
  // carried an h2c upgrade; it becomes stream 1. |preread| holds bytes that
  // were already read from the transport.
  static void serve(std::unique_ptr<net::Transport> transport, Handler handler, Options opts,
                    std::optional<Request> upgraded = std::nullopt, std::string preread = {});

  ~H2Connection();
  H2Connection(const H2Connection&) = delete;
  H2Connection& operator=(const H2Connection&) = delete;

  // The future throws net::NetError if the stream fails.
  std::future<Response> submit(Request req);
  bool usable() const noexcept { return !closed_.load() && !goaway_.load(); }
  std::size_t pushes_rejected() const noexcept { return pushes_rejected_.load(); }
  void close();

 private:
  enum class Role { Client, Server };

  struct Stream {
    std::uint32_t id = 0;
    bool has_promise = false;
    std::promise<Response> promise;
    Response response;
    bool final_headers = false;
    Request request;
    std::uint32_t recv_unacked = 0;
    std::int64_t send_window = 0;
    std::string out_body;
    std::size_t out_offset = 0;
    bool sending = false;
  };

  struct Submission {
    Request request;
    std::promise<Response> promise;
  };

  H2Connection(Role role, std::unique_ptr<net::Transport> transport, Options opts);

  void run() noexcept;
  void loop();
  void start_preface(std::optional<Request> upgraded);
  void take_submissions();
  bool read_available();
  void write_available();
  void handle_frame(const h2::Frame& f);
  void on_settings(const h2::Frame& f);
  void on_header_block(std::uint32_t stream_id, const std::string& block, bool end_stream);
  void on_data(const h2::Frame& f);
  void on_goaway(const h2::Frame& f);
  void dispatch(Stream& s);
  void pump_data();
  void emit_headers(std::uint32_t stream_id, const std::string& block, bool end_stream);
  void finish_client_stream(std::uint32_t id);
  void fail_stream(Stream& s, const net::NetError& err);
  void fail_all(const net::NetError& err);
  std::size_t active_client_streams() const;
  void wake();

  Role role_;
  std::unique_ptr<net::Transport> transport_;
  Options opts_;
  Handler handler_;

  HpackEncoder encoder_;
  HpackDecoder decoder_;
  h2::FrameReader reader_;
  std::string out_;
  bool preface_received_ = false;

  std::uint32_t peer_max_frame_ = h2::kDefaultMaxFrame;
  std::uint32_t peer_initial_window_ = h2::kDefaultWindow;
  std::uint32_t peer_max_streams_ = 100;
  std::int64_t conn_send_window_ = h2::kDefaultWindow;
  std::uint32_t conn_recv_unacked_ = 0;
  std::map<std::uint32_t, Stream> streams_;
  std::uint32_t next_stream_id_ = 1;
  std::uint32_t last_peer_stream_ = 0;
  std::uint32_t last_pumped_ = 0;

  // CONTINUATION assembly.
  std::uint32_t cont_stream_ = 0;
  std::uint32_t cont_promised_ = 0;
  bool cont_end_stream_ = false;
  bool cont_is_push_ = false;
  std::string cont_block_;

  bool peer_closed_ = false;
  bool goaway_sent_ = false;
  std::atomic<bool> closed_{false};
  std::atomic<bool> goaway_{false};
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> pushes_rejected_{0};

  std::mutex mu_;
  std::deque<Submission> submissions_;
  int wake_fds_[2] = {-1, -1};
  std::thread io_;
};

}  // namespace h2scope::http
