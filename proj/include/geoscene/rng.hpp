#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace geoscene {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64_str(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// Deterministic RNG with named substreams. Forking by name derives an
// independent stream from the parent seed without consuming parent state,
// so the draw order of one stream never shifts another.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

    uint64_t seed() const { return seed_; }

    Rng fork(std::string_view name) const {
        uint64_t h = fnv1a64(&seed_, sizeof(seed_));
        h = fnv1a64_str(name, h);
        return Rng(h);
    }

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) {
        return n <= 1 ? 0 : int64_t(uniform() * double(n)) % n;
    }

    // standard normal via Box-Muller; the spare value is cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    float normal_f() { return static_cast<float>(normal()); }

    // engine + spare cache serialized as text, for checkpoint resume
    std::string state() const {
        std::ostringstream os;
        os << engine_ << '|' << (have_spare_ ? 1 : 0) << '|';
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%a", spare_);
        os << buf;
        return os.str();
    }

    void set_state(const std::string& s) {
        auto p1 = s.rfind('|');
        auto p0 = s.rfind('|', p1 - 1);
        std::istringstream is(s.substr(0, p0));
        is >> engine_;
        have_spare_ = s[p0 + 1] == '1';
        spare_ = std::strtod(s.c_str() + p1 + 1, nullptr);
    }

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace geoscene
