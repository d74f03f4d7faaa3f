#include "labelflow/random.hpp"

namespace labelflow {

RandomStream::RandomStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t substream) {
    const auto p = static_cast<std::uint64_t>(purpose);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(substream),
                      static_cast<std::uint32_t>(substream >> 32)};
    engine_.seed(seq);
}

double RandomStream::uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

double RandomStream::normal(double mean, double sd) {
    if (sd == 0.0) return mean;
    return std::normal_distribution<double>(mean, sd)(engine_);
}

}  // namespace labelflow
