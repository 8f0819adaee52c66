#include "h2scope/analyzer/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "h2scope/common/error.hpp"

namespace h2scope::analyzer {

std::int64_t geometric_quantile(double p, double q) {
  if (!(p > 0 && p <= 1)) throw Error(ErrorCode::InvalidArgument, "geometric p outside (0, 1]");
  if (p == 1 || q <= 0) return 1;
  double k = std::ceil(std::log1p(-q) / std::log1p(-p) - 1e-12);
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(k));
}

GeometricMoments geometric_moments(double p) {
  return {1.0 / p, static_cast<double>(geometric_quantile(p, 0.5)), static_cast<double>(geometric_quantile(p, 0.9))};
}

namespace {

std::vector<std::int64_t> stratified(std::size_t n, double p, std::mt19937_64& rng) {
  std::vector<std::int64_t> out(n);
  // Upper stratum edges, so rank k of the sorted sample is exactly Q(k/n).
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = geometric_quantile(p, std::min(static_cast<double>(i + 1), dn - 0.5) / dn);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

fetcher::ObjectRecord object(const std::string& host, const std::string& path, std::int64_t at) {
  fetcher::ObjectRecord o;
  o.url = "https://" + host + path;
  o.host = host;
  o.domain = host;
  o.status = 200;
  o.size = 1000;
  o.content_type = "image/png";
  o.protocol = http::Protocol::H2;
  o.connection_id = host;
  o.t_start = Micros(at);
  o.t_end = Micros(at + 1000);
  return o;
}

}  // namespace

std::vector<fetcher::PageSnapshot> sharded_corpus(std::size_t sites, const ShardingParams& params) {
  std::mt19937_64 rng(params.seed);
  auto domains = stratified(sites, params.p_domains, rng);
  auto per_domain = stratified(sites, params.p_objects, rng);
  std::vector<fetcher::PageSnapshot> out;
  out.reserve(sites);
  for (std::size_t s = 0; s < sites; ++s) {
    fetcher::PageSnapshot snap;
    const std::string root_host = fmt::format("site{:04d}.test", s);
    snap.root_url = "https://" + root_host + "/";
    snap.protocol = http::Protocol::H2;
    snap.root = object(root_host, "/", 0);
    snap.html_bytes = snap.root->size;
    std::vector<std::string> hosts{root_host};
    for (std::int64_t d = 1; d < domains[s]; ++d) hosts.push_back(fmt::format("cdn{}-site{:04d}.test", d, s));
    for (const auto& h : hosts) snap.connections.push_back({h, h, http::Protocol::H2, 0});
    std::int64_t t = 1000;
    for (std::size_t d = 0; d < hosts.size(); ++d) {
      // The root already counts as one object on the first domain.
      std::int64_t count = per_domain[s] - (d == 0 ? 1 : 0);
      for (std::int64_t k = 0; k < count; ++k) {
        snap.objects.push_back(object(hosts[d], fmt::format("/o{}.png", k), t));
        snap.connections[d].object_count += 1;
        t += 10;
      }
    }
    snap.connections[0].object_count += 1;
    snap.plt = Micros(t + 1000);
    out.push_back(std::move(snap));
  }
  return out;
}

}  // namespace h2scope::analyzer
