#include "h2scope/fixtures/link_emulator.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <condition_variable>
#include <deque>
#include <string>

namespace h2scope::fixtures {

using Clock = std::chrono::steady_clock;

LinkEmulator::LinkEmulator(LinkProfile profile) { configure(profile); }

void LinkEmulator::configure(const LinkProfile& profile) {
  std::lock_guard lk(mu_);
  profile_ = profile;
  rng_.seed(profile.seed);
  link_free_[0] = link_free_[1] = Clock::now();
  connections_ = 0;
}

LinkProfile LinkEmulator::profile() const {
  std::lock_guard lk(mu_);
  return profile_;
}

bool LinkEmulator::shaping() const {
  std::lock_guard lk(mu_);
  return profile_.bandwidth_kbps.has_value() || profile_.extra_delay_ms > 0 || profile_.loss_pct > 0;
}

bool LinkEmulator::draw_loss() {
  if (profile_.loss_pct <= 0) return false;
  std::uniform_real_distribution<double> u(0.0, 100.0);
  bool lost = u(rng_) < profile_.loss_pct;
  if (lost) lost_.fetch_add(1);
  return lost;
}

Micros LinkEmulator::one_way() const { return Micros(profile_.extra_delay_ms * 1000 / 2); }

Micros LinkEmulator::connection_setup_delay() {
  std::lock_guard lk(mu_);
  Micros delay = Micros(profile_.extra_delay_ms * 1000);
  if (profile_.loss_pct <= 0) return delay;
  std::seed_seq seq{profile_.seed, ++connections_};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int packet = 0; packet < 2; ++packet) {  // SYN, SYN-ACK
    if (u(rng) < profile_.loss_pct) {
      delay += kInitialRto;
      lost_.fetch_add(1);
    }
  }
  return delay;
}

Micros LinkEmulator::extra_rtt() const {
  std::lock_guard lk(mu_);
  return Micros(profile_.extra_delay_ms * 1000);
}

Micros LinkEmulator::retransmission_timeout() const {
  std::lock_guard lk(mu_);
  return kMinRto + Micros(profile_.extra_delay_ms * 1000);
}

LinkEmulator::Segment LinkEmulator::schedule(Direction dir, std::size_t bytes) {
  std::lock_guard lk(mu_);
  auto now = Clock::now();
  auto& free_at = link_free_[static_cast<int>(dir)];
  SteadyTime start = std::max(now, free_at);
  SteadyTime sent = start;
  if (profile_.bandwidth_kbps && *profile_.bandwidth_kbps > 0) {
    auto bits = static_cast<std::int64_t>((bytes + kHeaderBytes) * 8);
    sent = start + Micros(bits * 1000 / *profile_.bandwidth_kbps);
    free_at = sent;
  }
  return {sent + one_way(), draw_loss()};
}

ShapingProxy::ShapingProxy(std::uint16_t upstream_port, std::shared_ptr<LinkEmulator> link)
    : upstream_port_(upstream_port), link_(std::move(link)) {
  listener_ = net::listen_loopback(0, &port_);
  acceptor_ = std::thread([this] { accept_loop(); });
}

ShapingProxy::~ShapingProxy() { stop(); }

void ShapingProxy::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listener_.get(), SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  std::list<Worker> workers;
  {
    std::lock_guard lk(mu_);
    for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& w : workers) {
    if (w.thread.joinable()) w.thread.join();
  }
}

void ShapingProxy::accept_loop() {
  while (!stopping_.load()) {
    pollfd p{listener_.get(), POLLIN, 0};
    if (::poll(&p, 1, 200) <= 0) continue;
    int cfd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (cfd < 0) continue;
    connections_.fetch_add(1);
    net::set_nodelay(cfd);
    std::lock_guard lk(mu_);
    if (stopping_.load()) {
      ::close(cfd);
      break;
    }
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (it->done->load()) {
        it->thread.join();
        it = workers_.erase(it);
      } else {
        ++it;
      }
    }
    auto done = std::make_shared<std::atomic<bool>>(false);
    workers_.push_back(Worker{std::thread([this, cfd, done] {
                                relay(net::Fd(cfd));
                                done->store(true);
                              }),
                              done});
  }
}

namespace {

// One direction of a proxied connection: a reader cuts the byte stream into
// segments and stamps them; a writer releases them in order, holding back
// everything behind a lost segment until it is repaired.
class Pipe {
 public:
  Pipe(int from, int to, LinkEmulator& link, LinkEmulator::Direction dir)
      : from_(from), to_(to), link_(link), dir_(dir) {}

  void read_side() {
    char buf[LinkEmulator::kSegmentBytes];
    for (;;) {
      ssize_t n = ::recv(from_, buf, sizeof(buf), 0);
      if (n <= 0) break;
      auto seg = link_.schedule(dir_, static_cast<std::size_t>(n));
      std::lock_guard lk(mu_);
      queue_.push_back({seg, std::string(buf, static_cast<std::size_t>(n))});
      cv_.notify_one();
    }
    std::lock_guard lk(mu_);
    eof_ = true;
    cv_.notify_one();
  }

  void write_side() {
    SteadyTime last = Clock::now();
    for (;;) {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return !queue_.empty() || eof_; });
      if (queue_.empty()) break;
      // Re-evaluated whenever new segments arrive, since they can trigger
      // fast retransmit of a lost head.
      for (;;) {
        SteadyTime due = std::max(release_time(), last);
        std::size_t seen = queue_.size();
        bool more = cv_.wait_until(lk, due, [&] { return queue_.size() != seen || eof_ != eof_seen_; });
        eof_seen_ = eof_;
        if (!more) break;
      }
      last = std::max(release_time(), last);
      auto seg = std::move(queue_.front());
      queue_.pop_front();
      lk.unlock();
      std::this_thread::sleep_until(last);
      std::string_view data = seg.second;
      bool failed = false;
      while (!data.empty()) {
        ssize_t w = ::send(to_, data.data(), data.size(), MSG_NOSIGNAL);
        if (w <= 0) {
          failed = true;
          break;
        }
        data.remove_prefix(static_cast<std::size_t>(w));
      }
      if (failed) {
        ::shutdown(from_, SHUT_RD);
        break;
      }
    }
    ::shutdown(to_, SHUT_WR);
  }

 private:
  // Caller holds mu_.
  SteadyTime release_time() const {
    const auto& head = queue_.front().first;
    if (!head.lost) return head.arrival;
    SteadyTime repaired = head.arrival + link_.retransmission_timeout();
    int dupacks = 0;
    for (std::size_t i = 1; i < queue_.size(); ++i) {
      if (queue_[i].first.lost) continue;
      if (++dupacks == 3) {
        repaired = std::min(repaired, queue_[i].first.arrival + link_.extra_rtt());
        break;
      }
    }
    return repaired;
  }

  int from_;
  int to_;
  LinkEmulator& link_;
  LinkEmulator::Direction dir_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<LinkEmulator::Segment, std::string>> queue_;
  bool eof_ = false;
  bool eof_seen_ = false;
};

}  // namespace

void ShapingProxy::relay(net::Fd client) {
  int cfd = client.get();
  {
    std::lock_guard lk(mu_);
    live_fds_.insert(cfd);
  }
  auto forget = [&](int fd) {
    std::lock_guard lk(mu_);
    if (auto it = live_fds_.find(fd); it != live_fds_.end()) live_fds_.erase(it);
  };
  std::this_thread::sleep_for(link_->connection_setup_delay());
  net::Fd upstream;
  try {
    upstream = net::connect_tcp(net::Resolver{}, "127.0.0.1", upstream_port_,
                                net::deadline_after(std::chrono::seconds(5)));
  } catch (const std::exception&) {
    forget(cfd);
    return;
  }
  net::set_nonblocking(upstream.get(), false);
  net::set_nonblocking(cfd, false);
  int ufd = upstream.get();
  {
    std::lock_guard lk(mu_);
    live_fds_.insert(ufd);
  }
  Pipe up(cfd, ufd, *link_, LinkEmulator::Direction::Upstream);
  Pipe down(ufd, cfd, *link_, LinkEmulator::Direction::Downstream);
  std::thread t1([&] { up.read_side(); });
  std::thread t2([&] { up.write_side(); });
  std::thread t3([&] { down.read_side(); });
  down.write_side();
  t1.join();
  t2.join();
  t3.join();
  forget(cfd);
  forget(ufd);
}

}  // namespace h2scope::fixtures
