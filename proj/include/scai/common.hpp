#pragma once

// Shared low-level utilities: deterministic RNG streams, hashing, and a
// small ordered-reduction thread pool helper. Everything here is chosen so
// that results are bit-identical across reruns and across thread counts.

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace scai {

static_assert(std::endian::native == std::endian::little,
              "serialized payloads are little-endian; big-endian hosts are unsupported");

// SplitMix64: used to derive independent seed streams from a master seed.
// Derived streams depend only on (seed, salt), never on call order, so any
// stage/sample can be regenerated in isolation.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    return splitmix64(seed ^ splitmix64(salt));
}

// xoshiro256** by Blackman/Vigna. Self-contained so draws are reproducible
// across standard libraries (std distributions are implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        for (auto& word : s_) {
            seed = splitmix64(seed);
            word = seed;
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; one value per call, the twin draw is
    // discarded to keep the stream position independent of usage pattern.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Rejection-free is fine here: 64-bit modulo bias is negligible for
        // the small n used in shuffles, but keep it exact anyway.
        const std::uint64_t threshold = -n % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

// Fisher-Yates in a fixed order so shuffles don't depend on the standard
// library's std::shuffle implementation.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = std::size_t(rng.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// FNV-1a 64-bit. Not cryptographic; used for content hashes where we only
// need "any byte changed => hash changed" with overwhelming probability.
class Fnv1a64 {
public:
    void update(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ull;
        }
    }
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ull;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    Fnv1a64 h;
    h.update(data, n);
    return h.digest();
}

std::string hex64(std::uint64_t v);

// Resolves a requested worker count: 0 means "use what the machine has".
inline int resolve_threads(int requested) {
    if (requested < 0) throw std::invalid_argument("thread count must be >= 0");
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : int(hw);
}

// Runs fn(i) for i in [0, n) across `threads` workers with a static block
// partition. Workers must only write to per-index slots; callers then reduce
// those slots in index order, which makes results independent of both thread
// count and scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace scai
