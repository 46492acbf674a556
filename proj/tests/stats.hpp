#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <random>
#include <vector>

#include "mimnet/memory.hpp"

namespace stats {

struct ChiSquare {
  double statistic = 0.0;
  double p_value = 0.0;
  std::vector<std::size_t> counts;
};

/// Pearson goodness-of-fit of observed counts against a uniform distribution.
inline ChiSquare uniform_fit(const std::vector<std::size_t>& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  const double expected = static_cast<double>(total) / static_cast<double>(counts.size());
  ChiSquare r;
  r.counts = counts;
  for (auto c : counts) r.statistic += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
  r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
  return r;
}

/// Hot-index counts of `draws` random attention rows over n memories.
inline ChiSquare attention_uniformity(std::size_t n, std::size_t draws, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> counts(n, 0);
  for (std::size_t k = 0; k < draws; ++k) {
    const auto row = mimnet::sample_random_attention(n, rng);
    for (std::size_t j = 0; j < n; ++j) {
      if (row[j] == 1.0) ++counts[j];
    }
  }
  return uniform_fit(counts);
}

}  // namespace stats
