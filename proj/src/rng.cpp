#include "ltcl/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "ltcl/error.hpp"

namespace ltcl {

std::uint64_t Rng::below(std::uint64_t n) {
    require(n > 0, ErrorCode::Domain, "Rng::below requires n > 0");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return x % n;
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(angle);
    has_cached_normal_ = true;
    return r * std::cos(angle);
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    require(k <= n, ErrorCode::Capacity, "cannot sample more items than available");
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    // Partial Fisher-Yates: the first k slots hold the selection.
    for (std::size_t i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

Rng Rng::split(std::uint64_t stream_id) {
    // SplitMix64 finalizer over (parent draw, stream id).
    std::uint64_t z = engine_() + 0x9E3779B97F4A7C15ULL * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return Rng(z ^ (z >> 31));
}

}  // namespace ltcl
