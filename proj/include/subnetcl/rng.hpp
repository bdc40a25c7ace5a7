#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace subnetcl {

/// Named deterministic random stream. All randomness in a run flows from one
/// root seed; sub-streams ("init", "minor-mask", "data", ...) are derived by
/// hashing the name so reordering one consumer does not shift the others.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::string_view name);

    double uniform();                        // U(0,1), never returns exactly 0 or 1
    double uniform(double lo, double hi);
    double normal();                         // N(0,1)
    std::uint64_t next_u64();
    std::size_t uniform_index(std::size_t n);  // integer in [0, n)

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(xs[i - 1], xs[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name);

}  // namespace subnetcl
