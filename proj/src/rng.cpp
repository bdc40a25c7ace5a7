#include "subnetcl/rng.hpp"

#include <cmath>
#include <vector>

namespace subnetcl {

namespace {
std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name) {
    return splitmix(seed ^ fnv1a(name));
}

RngStream::RngStream(std::uint64_t seed, std::string_view name)
    : gen_(mix_seed(seed, name)) {}

std::uint64_t RngStream::next_u64() { return gen_(); }

double RngStream::uniform() {
    // 53-bit mantissa draw in (0,1); the +0.5 offset keeps both ends open.
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal() {
    // Box-Muller; uniform() is never 0 so the log is safe.
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

std::size_t RngStream::uniform_index(std::size_t n) {
    // Rejection sampling for an unbiased bounded draw.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

}  // namespace subnetcl
