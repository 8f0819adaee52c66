#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <thread>

#include "h2scope/common/time.hpp"
#include "h2scope/net/socket.hpp"

namespace h2scope::fixtures {

struct LinkProfile {
  std::optional<std::int64_t> bandwidth_kbps;  // shared bottleneck, per direction
  std::int64_t extra_delay_ms = 0;             // added to the round-trip time
  double loss_pct = 0.0;                       // per-segment loss probability
  std::uint64_t seed = 1;
};

// In-process model of a shared bottleneck link. Every proxied connection
// draws from the same per-direction transmit queue, so parallel connections
// compete for bandwidth the way they would behind a real shaper.
//
// Loss is modeled on the TCP level. A lost data segment blocks everything
// behind it on the same connection until it is repaired: one RTT after the
// third later segment arrives (fast retransmit), or one retransmission
// timeout after its own arrival, whichever is first. A lost SYN or SYN-ACK
// delays connection setup by the initial RTO.
class LinkEmulator {
 public:
  enum class Direction { Upstream = 0, Downstream = 1 };

  static constexpr std::size_t kSegmentBytes = 1460;
  static constexpr std::size_t kHeaderBytes = 40;
  static constexpr std::chrono::milliseconds kMinRto{200};
  static constexpr std::chrono::milliseconds kInitialRto{1000};

  explicit LinkEmulator(LinkProfile profile = {});

  void configure(const LinkProfile& profile);
  LinkProfile profile() const;
  bool shaping() const;

  // Delay before a new connection may carry data. Handshake losses are drawn
  // from the connection's ordinal since configure(), so a seeded profile
  // gives the n-th connection the same fate regardless of thread timing.
  Micros connection_setup_delay();
  struct Segment {
    SteadyTime arrival;  // when it would arrive if not lost
    bool lost = false;
  };

  // Transmission of a segment entering the link now.
  Segment schedule(Direction dir, std::size_t bytes);
  // Round-trip time added by the profile.
  Micros extra_rtt() const;
  Micros retransmission_timeout() const;

  std::size_t segments_lost() const noexcept { return lost_.load(); }

 private:
  bool draw_loss();
  Micros one_way() const;

  mutable std::mutex mu_;
  LinkProfile profile_;
  std::mt19937_64 rng_;
  SteadyTime link_free_[2];
  std::atomic<std::size_t> lost_{0};
  std::uint64_t connections_ = 0;
};

// TCP proxy on loopback that forwards to |upstream_port| through a LinkEmulator.
class ShapingProxy {
 public:
  ShapingProxy(std::uint16_t upstream_port, std::shared_ptr<LinkEmulator> link);
  ~ShapingProxy();
  ShapingProxy(const ShapingProxy&) = delete;
  ShapingProxy& operator=(const ShapingProxy&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::size_t connections() const noexcept { return connections_.load(); }
  void stop();

 private:
  void accept_loop();
  void relay(net::Fd client);

  std::uint16_t upstream_port_;
  std::shared_ptr<LinkEmulator> link_;
  net::Fd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> connections_{0};
  std::mutex mu_;
  std::multiset<int> live_fds_;
  struct Worker {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::list<Worker> workers_;
  std::thread acceptor_;
};

}  // namespace h2scope::fixtures
