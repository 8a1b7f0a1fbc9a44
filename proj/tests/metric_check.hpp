#pragma once

#include <random>

#include "mgm/metrics.hpp"

namespace mgm::testing {

inline FeatureMatrix gaussian_samples(int n, int dim, double shift, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0, 1);
    FeatureMatrix x(n, dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    x.col(0).array() += shift;
    return x;
}

// N(0, I) against N(5 e_1, I): the distance is exactly 25.
inline double sampled_equal_cov_fid(int n, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const FeatureMatrix a = gaussian_samples(n, dim, 0.0, rng);
    const FeatureMatrix b = gaussian_samples(n, dim, 5.0, rng);
    return fid(a, b);
}

inline double random_embedding_r1(int batches, int batch_size, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const FeatureMatrix text = gaussian_samples(batches * batch_size, dim, 0.0, rng);
    const FeatureMatrix motion = gaussian_samples(batches * batch_size, dim, 0.0, rng);
    return retrieval_metrics(text, motion, batch_size, 1).r_precision[0];
}

inline double oracle_embedding_r1(int batches, int batch_size, int dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const FeatureMatrix f = gaussian_samples(batches * batch_size, dim, 0.0, rng);
    return retrieval_metrics(f, f, batch_size, 1).r_precision[0];
}

}  // namespace mgm::testing
