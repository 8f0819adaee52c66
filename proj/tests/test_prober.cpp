#include <openssl/ssl.h>

#include "doctest.h"
#include "h2scope/common/error.hpp"
#include "h2scope/fixtures/fixture_server.hpp"
#include "h2scope/prober/prober.hpp"

using namespace h2scope;
using namespace h2scope::prober;
using fixtures::FixtureServer;
using fixtures::FixtureServerOptions;

namespace {

ProbeConfig loopback_config(const std::string& host, std::uint16_t port) {
  ProbeConfig cfg;
  cfg.resolver.add_override(host, 0, {"127.0.0.1", port});
  cfg.connect_timeout = std::chrono::seconds(2);
  cfg.handshake_timeout = std::chrono::seconds(2);
  cfg.check_cleartext = false;
  return cfg;
}

FixtureServerOptions announcing(std::vector<std::string> alpn) {
  FixtureServerOptions o;
  o.alpn = std::move(alpn);
  return o;
}

}  // namespace

TEST_CASE("probe recovers a two-token announcement") {
  FixtureServer srv(announcing({"h2", "http/1.1"}));
  auto cfg = loopback_config("pair.test", srv.port());
  auto rec = probe_host("pair.test", srv.port(), cfg);
  CHECK(rec.mechanism == Mechanism::ALPN);
  CHECK(rec.announced == std::vector<std::string>{"h2", "http/1.1"});
  REQUIRE(rec.negotiated);
  CHECK(*rec.negotiated == "h2");
  CHECK(rec.multi_handshake);
  CHECK_FALSE(rec.error);
  CHECK(rec.announces_h2());
  CHECK(rec.cert_org == std::optional<std::string>("Fixture Org"));
}

TEST_CASE("probe keeps server order for a permuted announcement") {
  FixtureServer srv(announcing({"http/1.1", "spdy/3.1", "h2", "h2-14"}));
  auto cfg = loopback_config("perm.test", srv.port());
  auto a = probe_host("perm.test", srv.port(), cfg);
  auto b = probe_host("perm.test", srv.port(), cfg);
  CHECK(a.announced == std::vector<std::string>{"http/1.1", "spdy/3.1", "h2", "h2-14"});
  CHECK(a.announced == b.announced);
  CHECK(b.timestamp > a.timestamp);
  REQUIRE(a.negotiated);
  CHECK(*a.negotiated == "http/1.1");
}

TEST_CASE("probe of an h1-only server finds no h2") {
  FixtureServer srv(announcing({"http/1.1"}));
  auto cfg = loopback_config("h1.test", srv.port());
  auto rec = probe_host("h1.test", srv.port(), cfg);
  CHECK(rec.announced == std::vector<std::string>{"http/1.1"});
  CHECK_FALSE(rec.announces_h2());
  CHECK_FALSE(rec.multi_handshake);
}

TEST_CASE("probe of a refused port records NoTlsEndpoint") {
  std::uint16_t port = 0;
  { net::Fd l = net::listen_loopback(0, &port); }
  auto cfg = loopback_config("closed.test", port);
  cfg.retries = 0;
  auto rec = probe_host("closed.test", port, cfg);
  REQUIRE(rec.error);
  CHECK(*rec.error == ProbeError::NoTlsEndpoint);
  CHECK(rec.announced.empty());
  CHECK_FALSE(rec.negotiated);
  CHECK(rec.mechanism == Mechanism::NONE);
}

TEST_CASE("probe falls back to NPN when ALPN is ignored") {
  FixtureServerOptions o;
  o.alpn = {};
  o.npn = {"spdy/3.1", "h2-14", "http/1.1"};
  o.max_tls_version = TLS1_2_VERSION;
  FixtureServer srv(o);
  auto cfg = loopback_config("npn.test", srv.port());
  auto rec = probe_host("npn.test", srv.port(), cfg);
  CHECK(rec.mechanism == Mechanism::NPN);
  CHECK(rec.announced == std::vector<std::string>{"spdy/3.1", "h2-14", "http/1.1"});
  REQUIRE(rec.negotiated);
  // OpenSSL's NPN selection walks the server's list first.
  CHECK(*rec.negotiated == "spdy/3.1");
}

TEST_CASE("probe detects Alt-Svc on the root response") {
  FixtureServerOptions o;
  o.extra_headers.add("alt-svc", "h3=\":443\"; ma=86400");
  FixtureServer srv(o);
  srv.route("", "/", {200, "text/html", "<html></html>", {}});
  auto cfg = loopback_config("quic.test", srv.port());
  CHECK(probe_host("quic.test", srv.port(), cfg).quic_advertised);
}

TEST_CASE("www prefix flag changes the probed name") {
  FixtureServer srv(announcing({"h2"}));
  auto cfg = loopback_config("www.bare.test", srv.port());
  cfg.www_prefix = true;
  auto rec = probe_host("bare.test", srv.port(), cfg);
  CHECK(rec.host == "www.bare.test");
  CHECK(rec.announced == std::vector<std::string>{"h2"});
}

TEST_CASE("invalid host names are contract errors") {
  ProbeConfig cfg;
  CHECK_THROWS_AS(probe_host("bad host", 443, cfg), Error);
  CHECK_THROWS_AS(probe_host("-x.test", 443, cfg), Error);
  CHECK_THROWS_AS(probe_host("ok.test", 0, cfg), Error);
}

TEST_CASE("cleartext upgrade classification") {
  FixtureServerOptions up;
  up.tls = false;
  up.h2c_upgrade = true;
  FixtureServer h2c(up);
  h2c.route("", "/", {200, "text/plain", "ok", {}});
  FixtureServerOptions plain;
  plain.tls = false;
  FixtureServer h1(plain);
  h1.route("", "/", {200, "text/plain", "ok", {}});

  ProbeConfig cfg;
  cfg.connect_timeout = std::chrono::seconds(2);
  cfg.handshake_timeout = std::chrono::seconds(2);
  cfg.resolver.add_override("h2c.test", 0, {"127.0.0.1", h2c.port()});
  cfg.resolver.add_override("plain.test", 0, {"127.0.0.1", h1.port()});
  CHECK(check_cleartext_upgrade("h2c.test", h2c.port(), cfg) == UpgradeResult::SUPPORTED);
  CHECK(check_cleartext_upgrade("plain.test", h1.port(), cfg) == UpgradeResult::UNSUPPORTED);

  std::uint16_t closed = 0;
  { net::Fd l = net::listen_loopback(0, &closed); }
  cfg.resolver.add_override("closed.test", 0, {"127.0.0.1", closed});
  CHECK(check_cleartext_upgrade("closed.test", closed, cfg) == UpgradeResult::ERROR);
}

TEST_CASE("quic advertisement header rules") {
  http::HeaderMap h;
  CHECK_FALSE(check_quic_advertisement(h));
  h.add("Alt-Svc", "h3=\":443\"");
  CHECK(check_quic_advertisement(h));

  http::HeaderMap legacy;
  legacy.add("Alternate-Protocol", "443:quic");
  CHECK(check_quic_advertisement(legacy));

  http::HeaderMap h2only;
  h2only.add("alt-svc", "h2=\"alt.example:443\", clear");
  CHECK_FALSE(check_quic_advertisement(h2only));

  http::HeaderMap listed;
  listed.add("alt-svc", "h2=\":443\"; ma=60, h3-29=\":443\"");
  CHECK(check_quic_advertisement(listed));
}

TEST_CASE("h2 family tokens") {
  CHECK(is_h2_family("h2"));
  CHECK(is_h2_family("h2-14"));
  CHECK_FALSE(is_h2_family("h2c"));
  CHECK_FALSE(is_h2_family("h2-"));
  CHECK_FALSE(is_h2_family("http/1.1"));
}

TEST_CASE("probe records round-trip through json") {
  ProbeRecord r;
  r.host = "a.test";
  r.timestamp = utc_from_us(1'700'000'000'000'000);
  r.mechanism = Mechanism::ALPN;
  r.announced = {"h2", "http/1.1"};
  r.negotiated = "h2";
  r.cleartext_upgrade = UpgradeResult::UNSUPPORTED;
  r.cert_org = "Org";
  auto back = probe_record_from_json(to_json(r));
  CHECK(to_json(back) == to_json(r));

  auto j = to_json(r);
  j["schema_version"] = kSchemaVersion + 1;
  CHECK_THROWS_AS(probe_record_from_json(j), Error);
}
