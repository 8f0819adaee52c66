#include <future>
#include <random>
#include <thread>

#include "doctest.h"
#include "h2scope/fixtures/fixture_server.hpp"
#include "h2scope/http/h1.hpp"
#include "h2scope/http/h2_connection.hpp"
#include "h2scope/http/hpack.hpp"
#include "h2scope/http/url.hpp"
#include "h2scope/net/transport.hpp"

using namespace h2scope;
using namespace h2scope::http;

namespace {

std::string hex(std::string_view s) {
  static const char* d = "0123456789abcdef";
  std::string out;
  for (unsigned char c : s) {
    out.push_back(d[c >> 4]);
    out.push_back(d[c & 15]);
  }
  return out;
}

std::unique_ptr<net::TlsTransport> dial(std::uint16_t port, std::vector<std::string> alpn) {
  auto fd = net::connect_tcp(net::Resolver{}, "127.0.0.1", port, net::deadline_after(std::chrono::seconds(5)));
  return net::TlsTransport::connect(std::move(fd), net::TlsContext::client(),
                                    net::TlsClientParams{"site.test", std::move(alpn), {}},
                                    net::deadline_after(std::chrono::seconds(5)));
}

}  // namespace

TEST_CASE("huffman matches the RFC 7541 C.4.1 vector") {
  CHECK(hex(huffman_encode("www.example.com")) == "f1e3c2e5f23a6ba0ab90f4ff");
  CHECK(huffman_decode(huffman_encode("www.example.com")) == "www.example.com");
  CHECK(hex(huffman_encode("no-cache")) == "a8eb10649cbf");
}

TEST_CASE("huffman round-trips arbitrary bytes") {
  std::mt19937 rng(7);
  for (int iter = 0; iter < 300; ++iter) {
    std::string s(rng() % 64, '\0');
    for (auto& c : s) c = static_cast<char>(rng() & 0xff);
    CHECK(huffman_decode(huffman_encode(s)) == s);
  }
}

TEST_CASE("huffman rejects bad padding") {
  // A zero byte is a 5-bit code '0' plus three zero padding bits.
  CHECK_THROWS_AS(huffman_decode(std::string(1, '\0')), net::NetError);
}

TEST_CASE("hpack integer encoding follows RFC 7541 C.1") {
  std::string out;
  hpack_encode_integer(out, 10, 5, 0);
  CHECK(hex(out) == "0a");
  out.clear();
  hpack_encode_integer(out, 1337, 5, 0);
  CHECK(hex(out) == "1f9a0a");
  std::string_view in = out;
  CHECK(hpack_decode_integer(in, 5) == 1337);
  CHECK(in.empty());
}

TEST_CASE("hpack decodes the RFC 7541 C.3 request sequence") {
  HpackDecoder dec;
  auto unhex = [](std::string_view h) {
    std::string out;
    for (std::size_t i = 0; i + 1 < h.size(); i += 2) out.push_back(static_cast<char>(std::stoi(std::string(h.substr(i, 2)), nullptr, 16)));
    return out;
  };
  auto first = dec.decode(unhex("828684410f7777772e6578616d706c652e636f6d"));
  REQUIRE(first.size() == 4);
  CHECK(first[3].first == ":authority");
  CHECK(first[3].second == "www.example.com");
  auto second = dec.decode(unhex("828684be58086e6f2d6361636865"));
  REQUIRE(second.size() == 5);
  CHECK(second[3].second == "www.example.com");
  CHECK(second[4] == std::pair<std::string, std::string>{"cache-control", "no-cache"});
}

TEST_CASE("hpack encoder and decoder stay in sync across blocks") {
  HpackEncoder enc;
  HpackDecoder dec;
  std::mt19937 rng(11);
  for (int block = 0; block < 50; ++block) {
    HeaderList hl{{":method", "GET"}, {":path", "/obj" + std::to_string(rng() % 5)}, {"user-agent", "h2scope"}};
    if (rng() % 2) hl.emplace_back("x-custom-" + std::to_string(rng() % 3), std::string(rng() % 40, 'v'));
    if (rng() % 3 == 0) hl.emplace_back("cookie", "secret=" + std::to_string(rng()));
    CHECK(dec.decode(enc.encode(hl)) == hl);
  }
}

TEST_CASE("url resolution follows RFC 3986 examples") {
  auto base = parse_url("http://a/b/c/d;p?q");
  REQUIRE(base);
  auto r = [&](std::string_view ref) { return resolve_url(*base, ref)->str(); };
  CHECK(r("g") == "http://a/b/c/g");
  CHECK(r("./g") == "http://a/b/c/g");
  CHECK(r("g/") == "http://a/b/c/g/");
  CHECK(r("/g") == "http://a/g");
  CHECK(r("//g") == "http://g/");
  CHECK(r("?y") == "http://a/b/c/d;p?y");
  CHECK(r("g?y") == "http://a/b/c/g?y");
  CHECK(r("#s") == "http://a/b/c/d;p?q");
  CHECK(r("..") == "http://a/b/");
  CHECK(r("../g") == "http://a/b/g");
  CHECK(r("../../g") == "http://a/g");
  CHECK(r("../../../g") == "http://a/g");
  CHECK(r("/./g") == "http://a/g");
  CHECK(r("g;x=1/../y") == "http://a/b/c/y");
  CHECK_FALSE(resolve_url(*base, "mailto:x@y").has_value());
  CHECK_FALSE(resolve_url(*base, "data:image/png;base64,AAAA").has_value());
}

TEST_CASE("url parsing keeps explicit ports and lower-cases hosts") {
  auto u = parse_url("HTTPS://Example.TEST:8443/a/../b?x=1#frag");
  REQUIRE(u);
  CHECK(u->host == "example.test");
  CHECK(u->port == 8443);
  CHECK(u->target() == "/b?x=1");
  CHECK(u->str() == "https://example.test:8443/b?x=1");
  CHECK_FALSE(parse_url("ftp://x/").has_value());
  CHECK_FALSE(parse_url("/relative").has_value());
}

TEST_CASE("HTTP/1.1 client talks to the fixture server over TLS") {
  fixtures::FixtureServerOptions opts;
  opts.alpn = {"http/1.1"};
  fixtures::FixtureServer server(opts);
  server.route("", "/hello", {200, "text/plain", "hi there", {}});
  auto t = dial(server.port(), {"h2", "http/1.1"});
  CHECK(t->alpn_selected() == "http/1.1");
  H1Connection conn(std::move(t));
  Request req;
  req.authority = "site.test";
  req.target = "/hello";
  auto resp = conn.round_trip(req, net::deadline_after(std::chrono::seconds(5)));
  CHECK(resp.status == 200);
  CHECK(resp.body == "hi there");
  CHECK(conn.reusable());
  req.target = "/missing";
  CHECK(conn.round_trip(req, net::deadline_after(std::chrono::seconds(5))).status == 404);
}

TEST_CASE("HTTP/2 client multiplexes concurrent streams") {
  fixtures::FixtureServer server(fixtures::FixtureServerOptions{});
  std::string big(200'000, 'x');
  server.route("", "/big", {200, "application/octet-stream", big, {}});
  server.route("", "/small", {200, "text/plain", "s", {}});
  auto t = dial(server.port(), {"h2", "http/1.1"});
  REQUIRE(t->alpn_selected() == "h2");
  auto conn = H2Connection::connect_client(std::move(t));
  std::vector<std::future<Response>> futs;
  for (int i = 0; i < 10; ++i) {
    Request req;
    req.authority = "site.test";
    req.target = i % 2 ? "/big" : "/small";
    futs.push_back(conn->submit(req));
  }
  for (int i = 0; i < 10; ++i) {
    auto resp = futs[static_cast<std::size_t>(i)].get();
    CHECK(resp.status == 200);
    CHECK(resp.body.size() == (i % 2 ? big.size() : 1));
  }
  CHECK(server.connections_accepted() == 1);
}

TEST_CASE("h2c upgrade is answered with 101 by an upgrade-capable fixture") {
  fixtures::FixtureServerOptions opts;
  opts.tls = false;
  opts.h2c_upgrade = true;
  fixtures::FixtureServer server(opts);
  auto fd = net::connect_tcp(net::Resolver{}, "127.0.0.1", server.port(), net::deadline_after(std::chrono::seconds(5)));
  H1Connection conn(std::make_unique<net::PlainTransport>(std::move(fd)));
  Request req;
  req.scheme = "http";
  req.authority = "site.test";
  req.headers.add("Connection", "Upgrade, HTTP2-Settings");
  req.headers.add("Upgrade", "h2c");
  req.headers.add("HTTP2-Settings", "AAMAAABkAARAAAAA");
  auto resp = conn.round_trip(req, net::deadline_after(std::chrono::seconds(5)));
  CHECK(resp.status == 101);
}
