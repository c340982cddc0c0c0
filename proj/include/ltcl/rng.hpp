#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ltcl {

/// Seeded random stream with platform-independent derived distributions.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are implementation-defined, so every
/// derived quantity (uniform reals, bounded integers, normals, shuffles) is
/// computed here from raw 64-bit draws. Changing any of these algorithms must
/// bump kVersion.
class Rng {
public:
    static constexpr const char* kName = "mt19937_64";
    static constexpr int kVersion = 1;

    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    /// k distinct indices from [0, n), in selection order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    /// Derives an independent child stream, e.g. one per grid cell.
    Rng split(std::uint64_t stream_id);

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace ltcl
