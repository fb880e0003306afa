#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace rlcbf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Bad user-facing input: config keys, dimension mismatches, malformed files.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure at runtime: QP iteration cap, Cholesky breakdown, non-finite values.
struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training-time failure (non-finite gradients and the like).
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent deterministic stream derived from a master seed. Streams with
// distinct ids never share state, so adding a consumer does not shift the
// draws seen by existing ones.
inline std::mt19937_64 make_stream(uint64_t master_seed, uint64_t stream_id) {
    return std::mt19937_64(splitmix64(master_seed * 0x9e3779b97f4a7c15ull + stream_id));
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(g);
}

inline double gaussian(std::mt19937_64& g, double mean, double stddev) {
    std::normal_distribution<double> d(mean, stddev);
    return d(g);
}

}  // namespace rlcbf
