#pragma once

#include <cstdint>
#include <random>

#include "pslstm/tensor.hpp"

namespace pslstm {

/// Seeded generator. The sample stream is a pure function of the seed: the
/// engine is mt19937_64 and normals come from a hand-rolled Box-Muller, so no
/// implementation-defined std distribution is involved.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t draws() const { return draws_; }

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    /// Independent child stream derived from (seed, stream id).
    Rng fork(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::uint64_t draws_ = 0;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

Tensor rand_normal(Rng& rng, Shape shape, double mean, double stddev);
Tensor rand_uniform(Rng& rng, Shape shape, double lo, double hi);

}  // namespace pslstm
