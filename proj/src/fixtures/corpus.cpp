#include "h2scope/fixtures/corpus.hpp"

#include <set>

#include <fmt/format.h>

#include "h2scope/common/error.hpp"

namespace h2scope::fixtures {

std::string filler(std::size_t n, char seed) {
  static const std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";
  std::string out(n, ' ');
  std::size_t k = static_cast<unsigned char>(seed);
  for (std::size_t i = 0; i < n; ++i) {
    k = (k * 1103515245u + 12345u) & 0x7fffffff;
    out[i] = kAlphabet[(k >> 8) % kAlphabet.size()];
  }
  return out;
}

std::string html_with_inline_bytes(std::size_t total, std::size_t inline_bytes) {
  const std::string head = "<!doctype html><html><head><style>";
  const std::string mid = "</style><script>";
  const std::string tail_open = "</script></head><body><p>";
  const std::string tail_close = "</p></body></html>";
  std::size_t overhead = head.size() + mid.size() + tail_open.size() + tail_close.size();
  if (total < overhead + inline_bytes)
    throw Error(ErrorCode::InvalidArgument, fmt::format("html of {} bytes cannot hold {} inline bytes", total,
                                                        inline_bytes));
  std::size_t css = inline_bytes / 2;
  std::size_t js = inline_bytes - css;
  std::string out = head + std::string(css, 'c') + mid + std::string(js, 'j') + tail_open;
  out += filler(total - overhead - inline_bytes, 'p');
  out += tail_close;
  return out;
}

Corpus::Corpus(CorpusOptions opts) : opts_(std::move(opts)) {
  FixtureServerOptions so;
  so.alpn = opts_.alpn;
  so.extra_chain_certs = opts_.extra_chain_certs;
  server_ = std::make_unique<FixtureServer>(so);
  if (opts_.link) proxy_ = std::make_unique<ShapingProxy>(server_->port(), opts_.link);
}

Corpus::~Corpus() {
  if (proxy_) proxy_->stop();
  server_->stop();
}

std::uint16_t Corpus::port() const noexcept { return proxy_ ? proxy_->port() : server_->port(); }

void Corpus::pin(const std::string& host) {
  if (!resolver_.lookup_override(host, 443)) resolver_.add_override(host, 0, {"127.0.0.1", port()});
}

void Corpus::add_resource(const std::string& host, const std::string& path, FixtureResource res) {
  pin(host);
  server_->route(host, path, std::move(res));
}

HostedPage Corpus::add_page(const PageLayout& layout) {
  if (layout.domains.empty() && layout.objects > 0)
    throw Error(ErrorCode::InvalidArgument, "objects need at least one domain");
  HostedPage page;
  page.root_url = "https://" + layout.root_host + "/";
  std::set<std::string> hosts{layout.root_host};
  std::string body = "<!doctype html><html><head><title>" + layout.root_host + "</title>\n";
  for (int i = 0; i < layout.objects; ++i) {
    const std::string& host = layout.domains[static_cast<std::size_t>(i) % layout.domains.size()];
    hosts.insert(host);
    bool css = layout.with_stylesheet && i == 0;
    std::string path = fmt::format("/{}/obj{:03d}.{}", layout.root_host, i, css ? "css" : "png");
    std::string url = "https://" + host + path;
    page.object_urls.push_back(url);
    if (css) {
      std::string child_path = fmt::format("/{}/from-css.png", layout.root_host);
      std::string child_url = "https://" + host + child_path;
      page.object_urls.push_back(child_url);
      add_resource(host, child_path, {200, "image/png", filler(layout.object_bytes, 'x'), {}});
      std::string sheet = "body{background:url(" + child_path + ")}\n/*" + filler(layout.object_bytes, 's') + "*/";
      add_resource(host, path, {200, "text/css", sheet, {}});
      body += "<link rel=\"stylesheet\" href=\"" + url + "\">\n";
    } else {
      add_resource(host, path, {200, "image/png", filler(layout.object_bytes, static_cast<char>('a' + i % 26)), {}});
      body += "<img src=\"" + url + "\">\n";
    }
  }
  body += "</head><body>";
  body += filler(layout.html_padding, 'h');
  body += "</body></html>\n";
  add_resource(layout.root_host, "/", {200, "text/html; charset=utf-8", body, {}});
  page.hosts.assign(hosts.begin(), hosts.end());
  return page;
}

AnnounceServeFleet::AnnounceServeFleet(int hosts, int serving) {
  if (hosts < 1 || serving < 0 || serving > hosts)
    throw Error(ErrorCode::InvalidArgument, "fleet needs 0 <= serving <= hosts");
  FixtureServerOptions front;
  front.alpn = {"h2", "http/1.1"};
  front_ = std::make_unique<FixtureServer>(front);
  FixtureServerOptions legacy;
  legacy.alpn = {"http/1.1"};
  legacy_ = std::make_unique<FixtureServer>(legacy);
  for (int i = 0; i < hosts; ++i) {
    std::string host = fmt::format("site{:02d}.fleet.test", i + 1);
    hosts_.push_back(host);
    resolver_.add_override(host, 0, {"127.0.0.1", front_->port()});
    // The serving hosts are spread evenly through the list.
    bool serves = serving > 0 && (i * serving) / hosts != ((i + 1) * serving) / hosts;
    if (serves) {
      serving_.push_back(host);
      front_->route(host, "/", {200, "text/html", "<html><body>" + host + "</body></html>", {}});
    } else {
      std::string legacy_host = "legacy." + host;
      resolver_.add_override(legacy_host, 0, {"127.0.0.1", legacy_->port()});
      FixtureResource moved{301, "text/html", "moved", {}};
      moved.headers.add("location", "https://" + legacy_host + "/");
      front_->route(host, "/", moved);
      legacy_->route(legacy_host, "/", {200, "text/html", "<html><body>legacy</body></html>", {}});
    }
  }
}

}  // namespace h2scope::fixtures
