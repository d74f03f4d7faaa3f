#pragma once

#include <cstdint>
#include <random>

namespace labelflow {

/// Independent random sub-streams derived from one run seed. Each purpose
/// gets its own engine so that, e.g., drawing more sample points never shifts
/// the label-initialisation draws.
enum class StreamPurpose : std::uint64_t {
    sampling = 0x5a17,
    init = 0x1a17,
    selection = 0x5e1e,
};

class RandomStream {
public:
    RandomStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t substream = 0);

    double uniform(double lo, double hi);
    /// Normal draw; `sd` is the standard deviation (sd == 0 returns `mean`).
    double normal(double mean, double sd);
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace labelflow
