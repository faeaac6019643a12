#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace bhdetect {

/// Seeded generator with platform-independent draws.
///
/// std::uniform_*_distribution and std::normal_distribution are
/// implementation-defined, so uniform and normal variates are derived here
/// directly from the mt19937_64 stream to keep runs bit-identical across
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Independent child stream keyed by a label; does not advance this one.
    static Rng derive(std::uint64_t seed, std::string_view label);

    std::uint64_t next_u64() { return engine_(); }
    double uniform();                          // [0, 1)
    std::uint64_t uniform_index(std::uint64_t n);  // [0, n)
    double normal();
    double exponential(double mean);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace bhdetect
