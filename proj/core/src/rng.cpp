#include "longrun/rng.hpp"

#include <cmath>

namespace longrun {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

RngStream::RngStream(RngStreamSpec spec) {
    // Mix seed and stream id through splitmix64 so that nearby ids give
    // unrelated xoshiro256++ states.
    std::uint64_t s = spec.master_seed ^ (0xD1B54A32D192ED03ULL * (spec.stream_id + 1));
    for (auto& word : state_) word = splitmix64(s);
    // xoshiro state must not be all zero; splitmix64 output never is for
    // all four words simultaneously, but keep the guard explicit.
    if ((state_[0] | state_[1] | state_[2] | state_[3]) == 0) state_[0] = 1;
}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::gaussian() {
    if (have_cached_) {
        have_cached_ = false;
        return cached_;
    }
    // Box-Muller; u1 bounded away from 0 so the log stays finite.
    double u1 = uniform01();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
}

Eigen::MatrixXd RngStream::gaussian_matrix(int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = gaussian();
    }
    return m;
}

Eigen::VectorXd RngStream::gaussian_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = gaussian();
    return v;
}

}  // namespace longrun
