#pragma once

#include <cstdint>
#include <vector>

#include "metarefine/diff/matrix.hpp"
#include "metarefine/error.hpp"
#include "metarefine/maml/maml.hpp"
#include "metarefine/rng.hpp"

namespace metarefine::maml {

/// Synthetic task family: each task is an isotropic Gaussian whose mean is
/// drawn uniformly from [mean_lo, mean_hi] in every coordinate.
class GaussianTaskFamily {
 public:
  struct Config {
    std::size_t dim = 1;
    double mean_lo = -3.0;
    double mean_hi = 3.0;
    double sd = 1.0;
    std::size_t support_size = 16;
    std::size_t query_size = 16;
  };

  GaussianTaskFamily(Config cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed), rng_(seed) {
    if (cfg_.dim == 0 || cfg_.support_size == 0 || cfg_.query_size == 0 || !(cfg_.sd > 0.0) ||
        !(cfg_.mean_hi >= cfg_.mean_lo))
      throw ConfigError("invalid Gaussian task family");
  }

  Task<diff::Matrix> sample() {
    std::vector<double> mean(cfg_.dim);
    for (double& m : mean) m = rng_.uniform(cfg_.mean_lo, cfg_.mean_hi);
    Task<diff::Matrix> t;
    t.support = draw(mean, cfg_.support_size);
    t.query = draw(mean, cfg_.query_size);
    t.meta = {seed_, count_++, "gaussian-family"};
    last_mean_ = mean;
    return t;
  }

  std::vector<Task<diff::Matrix>> sample_batch(std::size_t n) {
    std::vector<Task<diff::Matrix>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample());
    return out;
  }

  const std::vector<double>& last_mean() const noexcept { return last_mean_; }
  const Config& config() const noexcept { return cfg_; }

 private:
  diff::Matrix draw(const std::vector<double>& mean, std::size_t n) {
    diff::Matrix m(n, cfg_.dim);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < cfg_.dim; ++c) m(r, c) = rng_.normal(mean[c], cfg_.sd);
    return m;
  }

  Config cfg_;
  std::uint64_t seed_;
  Rng rng_;
  std::size_t count_ = 0;
  std::vector<double> last_mean_;
};

}  // namespace metarefine::maml
