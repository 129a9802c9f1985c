#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace doll {

using real = double;

// Error taxonomy; the CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PlacementError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Single-channel H x W plane of reals (images, attribution maps).
struct Plane {
    int h = 0, w = 0;
    std::vector<real> v;

    Plane() = default;
    Plane(int h_, int w_, real fill = 0.0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    real& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    real at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
};

/// Binary H x W mask, one byte per pixel, values 0 or 1.
struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    Mask() = default;
    Mask(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
    size_t count() const {
        size_t n = 0;
        for (uint8_t b : v) n += b;
        return n;
    }
    bool empty_mask() const { return count() == 0; }
};

/// C x H x W tensor, channel-major contiguous storage.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<real> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, real fill = 0.0)
        : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, fill) {}

    real& at(int ci, int y, int x) {
        return v[(static_cast<size_t>(ci) * h + y) * w + x];
    }
    real at(int ci, int y, int x) const {
        return v[(static_cast<size_t>(ci) * h + y) * w + x];
    }
    size_t size() const { return v.size(); }
    const real* chan(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }
    real* chan(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
};

/// Deterministic RNG: splitmix64 core with hand-rolled distributions so that
/// streams are bit-identical across platforms and standard library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    /// Derives an independent stream from (seed, tag); used for per-sample
    /// and per-purpose streams ("shape", "noise", parameter init, ...).
    static Rng derive(uint64_t seed, const std::string& tag) {
        uint64_t h = 1469598103934665603ull;  // FNV-1a offset basis
        h ^= seed;
        h *= 1099511628211ull;
        for (unsigned char ch : tag) {
            h ^= ch;
            h *= 1099511628211ull;
        }
        return Rng(h);
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1) with 53-bit resolution.
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    int range(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(real p) { return uniform() < p; }

    /// Standard normal via Box-Muller (fresh pair each call, no cached spare).
    real normal() {
        real u1 = 1.0 - uniform();  // avoid log(0)
        real u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    real normal(real mu, real sigma) { return mu + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(xs[i - 1], xs[j]);
        }
    }

private:
    uint64_t state_;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

}  // namespace doll
