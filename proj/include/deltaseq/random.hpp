#pragma once

#include "error.hpp"

#include <array>
#include <cstdint>
#include <numeric>
#include <random>
#include <unordered_set>
#include <vector>

namespace deltaseq {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent streams from one seed.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of stream `stream` under master seed `seed`. Streams are order-independent,
/// so replicate r can be generated on any worker and still draw the same numbers.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
    return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    return Rng(derive_seed(seed, stream));
}

/// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    if (k > n) {
        throw ValidationError("cannot draw " + std::to_string(k) + " distinct items from " +
                              std::to_string(n));
    }
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    return pool;
}

/// Binomial coefficient, saturating at UINT64_MAX.
inline std::uint64_t choose_saturating(std::uint64_t n, std::uint64_t k) {
    if (k > n) {
        return 0;
    }
    k = std::min(k, n - k);
    __extension__ using u128 = unsigned __int128;
    u128 acc = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        acc = acc * (n - k + i) / i;
        if (acc > UINT64_MAX) {
            return UINT64_MAX;
        }
    }
    return static_cast<std::uint64_t>(acc);
}

/// Inverse of the combinatorial number system: the rank-th K-subset of [0, n),
/// returned in ascending order.
template <std::size_t K>
std::array<std::size_t, K> unrank_combination(std::uint64_t rank, std::size_t n) {
    std::array<std::size_t, K> out{};
    std::size_t hi = n;
    for (std::size_t slot = K; slot-- > 0;) {
        // largest c < hi with C(c, slot + 1) <= rank
        std::size_t lo = slot;
        std::size_t up = hi - 1;
        while (lo < up) {
            const std::size_t mid = lo + (up - lo + 1) / 2;
            if (choose_saturating(mid, slot + 1) <= rank) {
                lo = mid;
            } else {
                up = mid - 1;
            }
        }
        const std::size_t c = lo;
        out[slot] = c;
        rank -= choose_saturating(c, slot + 1);
        hi = c;
    }
    return out;
}

/**
 * Draws K-subsets of [0, n) uniformly without replacement, one at a time.
 * Each call to next() returns a subset not returned before.
 */
template <std::size_t K>
class DistinctSubsetSampler {
public:
    DistinctSubsetSampler(std::size_t n, Rng& rng) : n_(n), total_(choose_saturating(n, K)), rng_(rng) {
        if (total_ == UINT64_MAX) {
            throw ValidationError("subset space too large to enumerate");
        }
    }

    std::uint64_t total() const noexcept { return total_; }
    std::uint64_t drawn() const noexcept { return seen_.size(); }
    bool exhausted() const noexcept { return seen_.size() >= total_; }

    std::array<std::size_t, K> next() {
        if (exhausted()) {
            throw ValidationError("all " + std::to_string(total_) + " subsets already drawn");
        }
        std::uniform_int_distribution<std::uint64_t> pick(0, total_ - 1);
        for (;;) {
            const std::uint64_t r = pick(rng_);
            if (seen_.insert(r).second) {
                return unrank_combination<K>(r, n_);
            }
        }
    }

private:
    std::size_t n_;
    std::uint64_t total_;
    Rng& rng_;
    std::unordered_set<std::uint64_t> seen_;
};

} // namespace deltaseq
