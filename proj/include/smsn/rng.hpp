#pragma once

#include <cstdint>
#include <random>

namespace smsn {

using RngEngine = std::mt19937_64;

/// Independent stream for (seed, stream_id). Parallel workers each take the
/// stream derived from their replicate index, so results do not depend on
/// the scheduling of work across threads.
inline RngEngine make_stream(std::uint64_t seed, std::uint64_t stream_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream_id & 0xffffffffu),
                    static_cast<std::uint32_t>(stream_id >> 32)};
  return RngEngine(seq);
}

}  // namespace smsn
