#pragma once
// Deterministic random helpers. std:: distributions are implementation
// defined, so the simulator rolls its own on top of mt19937_64 to keep
// seeded traces byte-identical everywhere.

#include <cmath>
#include <cstdint>
#include <random>

namespace trellis {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t u64() { return gen_(); }

    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : gen_() % n; }

    // inclusive range
    int irange(int lo, int hi) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * unit(); }

    double normal(double mu, double sigma) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1 = 0.0;
        do {
            u1 = unit();
        } while (u1 <= 0.0);
        double u2 = unit();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return mu + sigma * r * std::cos(th);
    }

    bool chance(double p) { return unit() < p; }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace trellis
