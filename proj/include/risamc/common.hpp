#pragma once

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace risamc {

using cd = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kSpeedOfLight = 299792458.0;

// ---------------------------------------------------------------------------
// Seeding and portable random numbers.
//
// All randomness in the pipeline flows through Rng, which maps the raw 64-bit
// output of std::mt19937_64 to doubles itself. The standard distributions are
// implementation-defined, so they would break byte-identical reruns across
// toolchains.
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic per-item seed derivation: hash the master seed with a path of
// indices (class, frame, stage, ...). Documented in the dataset manifest.
inline uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> path) {
    uint64_t s = master;
    (void)splitmix64(s);
    for (uint64_t p : path) {
        s ^= 0x9e3779b97f4a7c15ull + p;
        (void)splitmix64(s);
    }
    return splitmix64(s);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t raw() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), n > 0. Rejection-free modulo bias is
    // negligible for the small n used here, but do it properly anyway.
    uint64_t uniform_u64(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    int bit() { return static_cast<int>(gen_() >> 63); }

    // Standard normal via Box-Muller, caching the second deviate.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * kPi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Circularly-symmetric complex normal, E|z|^2 = 1.
    cd cgaussian() {
        const double re = gaussian();
        const double im = gaussian();
        return cd(re * M_SQRT1_2, im * M_SQRT1_2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[uniform_u64(i)]);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Small signal helpers.
// ---------------------------------------------------------------------------

inline double rms(std::span<const cd> x) {
    double acc = 0.0;
    for (const cd& v : x)
        acc += std::norm(v);
    return std::sqrt(acc / static_cast<double>(x.size()));
}

inline double mean_power(std::span<const cd> x) {
    double acc = 0.0;
    for (const cd& v : x)
        acc += std::norm(v);
    return acc / static_cast<double>(x.size());
}

inline void normalize_rms(std::vector<cd>& x) {
    const double r = rms(x);
    if (r > 0.0) {
        const double g = 1.0 / r;
        for (cd& v : x)
            v *= g;
    }
}

inline double db_to_lin(double db) { return std::pow(10.0, db / 10.0); }
inline double lin_to_db(double lin) { return 10.0 * std::log10(lin); }
inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }

// In-place radix-2 FFT, n must be a power of two. sign = -1 forward.
void fft_inplace(std::vector<cd>& x, int sign);

inline std::vector<cd> fft(std::vector<cd> x) {
    fft_inplace(x, -1);
    return x;
}

// FNV-1a 64-bit, used to fingerprint scenario/config inputs in reports.
inline uint64_t fnv1a64(std::span<const unsigned char> data) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t fnv1a64_file(const std::string& path);

std::string to_hex_u64(uint64_t v);

} // namespace risamc
