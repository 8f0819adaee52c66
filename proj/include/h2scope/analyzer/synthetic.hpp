#pragma once

#include <cstdint>
#include <vector>

#include "h2scope/fetcher/fetcher.hpp"

namespace h2scope::analyzer {

// Sharding generator: each site spreads its objects over D registrable
// domains with O objects per domain (root included). D and O follow
// geometric laws on {1, 2, ...} with success probabilities p_domains and
// p_objects, drawn by stratified inverse-CDF sampling so that a corpus of
// n sites tracks the closed-form moments closely.
struct ShardingParams {
  double p_domains = 0.3;
  double p_objects = 0.25;
  std::uint64_t seed = 1;
};

struct GeometricMoments {
  double mean = 0;
  double median = 0;  // smallest k with F(k) >= 0.5
  double p90 = 0;     // smallest k with F(k) >= 0.9
};

GeometricMoments geometric_moments(double p);

// Smallest k >= 1 with 1 - (1-p)^k >= q.
std::int64_t geometric_quantile(double p, double q);

std::vector<fetcher::PageSnapshot> sharded_corpus(std::size_t sites, const ShardingParams& params);

}  // namespace h2scope::analyzer
