#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "h2scope/fixtures/fixture_server.hpp"
#include "h2scope/fixtures/link_emulator.hpp"
#include "h2scope/net/socket.hpp"

namespace h2scope::fixtures {

struct PageLayout {
  std::string root_host;
  // Objects are spread round-robin over these hosts.
  std::vector<std::string> domains;
  int objects = 0;
  std::size_t object_bytes = 2048;
  // Filler text added to the HTML outside any style/script element.
  std::size_t html_padding = 0;
  // The first object is a stylesheet that references one more image.
  bool with_stylesheet = false;
};

struct HostedPage {
  std::string root_url;
  std::vector<std::string> object_urls;  // every embedded URL, stylesheet children included
  std::vector<std::string> hosts;        // distinct hosts, root host included
};

struct CorpusOptions {
  std::vector<std::string> alpn = {"h2", "http/1.1"};
  int extra_chain_certs = 0;
  // When set, all traffic crosses one shaped link.
  std::shared_ptr<LinkEmulator> link;
};

// A set of hosts served by one loopback TLS server, optionally behind a
// shaping proxy. resolver() pins every registered host to the listener.
class Corpus {
 public:
  explicit Corpus(CorpusOptions opts = {});
  ~Corpus();

  HostedPage add_page(const PageLayout& layout);
  void add_resource(const std::string& host, const std::string& path, FixtureResource res);

  const net::Resolver& resolver() const noexcept { return resolver_; }
  FixtureServer& server() noexcept { return *server_; }
  // Port clients should dial (the proxy when shaping).
  std::uint16_t port() const noexcept;
  // TCP connections that reached the server.
  std::size_t connections_accepted() const noexcept { return server_->connections_accepted(); }

 private:
  void pin(const std::string& host);

  CorpusOptions opts_;
  std::unique_ptr<FixtureServer> server_;
  std::unique_ptr<ShapingProxy> proxy_;
  net::Resolver resolver_;
};

// Deterministic filler body of |n| bytes.
std::string filler(std::size_t n, char seed = 'a');

// HTML document of exactly |total| bytes whose style and script bodies
// together hold |inline_bytes| bytes. Requires inline_bytes <= total - overhead.
std::string html_with_inline_bytes(std::size_t total, std::size_t inline_bytes);

// Hosts that announce h2 but only some of which serve their root over it.
// Non-serving hosts answer 301 to a host that negotiates http/1.1 only.
class AnnounceServeFleet {
 public:
  AnnounceServeFleet(int hosts, int serving);

  const std::vector<std::string>& hosts() const noexcept { return hosts_; }
  const std::vector<std::string>& serving_hosts() const noexcept { return serving_; }
  const net::Resolver& resolver() const noexcept { return resolver_; }
  std::uint16_t port() const noexcept { return front_->port(); }
  // Listener behind the legacy.<host> redirect targets.
  std::uint16_t legacy_port() const noexcept { return legacy_->port(); }

 private:
  std::unique_ptr<FixtureServer> front_;
  std::unique_ptr<FixtureServer> legacy_;
  std::vector<std::string> hosts_;
  std::vector<std::string> serving_;
  net::Resolver resolver_;
};

}  // namespace h2scope::fixtures
